//! Joint perception and prediction network: rasterizer, encoder, output
//! network, dense headers, losses and suppression.

mod header;
pub(crate) mod net;
mod raster;

use numcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::geom::{OrientedBox, Pose2};

pub use header::{
    decode_box,
    assign_targets, decode_and_nms, decode_grid, detection_loss, encode_box_target, nms, LossParts, LossWeights,
    Targets,
};
pub use net::{encode, init_params, output_network, Net, TrainableFn};
pub use raster::{rasterize, sweeps_to_receiver, RasterPoints};

/// Spatial layout shared by every vehicle's raster and feature map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub range_x: f64,
    pub range_y: f64,
    pub raster_resolution: f64,
    pub stride: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            range_x: 40.0,
            range_y: 20.0,
            raster_resolution: 0.5,
            stride: 4,
        }
    }
}

impl GridSpec {
    pub fn raster_hw(&self) -> (usize, usize) {
        (
            (2.0 * self.range_y / self.raster_resolution).round() as usize,
            (2.0 * self.range_x / self.raster_resolution).round() as usize,
        )
    }

    pub fn feature_hw(&self) -> (usize, usize) {
        let (h, w) = self.raster_hw();
        (h / self.stride, w / self.stride)
    }

    pub fn feature_resolution(&self) -> f64 {
        self.raster_resolution * self.stride as f64
    }

    /// Center of feature cell `(row, col)` in the vehicle frame.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let r = self.feature_resolution();
        (
            -self.range_x + (col as f64 + 0.5) * r,
            -self.range_y + (row as f64 + 0.5) * r,
        )
    }

    /// Pose of feature cell (0, 0)'s center for a vehicle at `pose`; grid
    /// columns run along the vehicle's heading.
    pub fn feature_origin(&self, pose: &Pose2) -> Pose2 {
        let (x, y) = self.cell_center(0, 0);
        pose.compose(&Pose2::new(x, y, 0.0))
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0.abs() <= self.range_x && p.1.abs() <= self.range_y
    }
}

/// Spatially anchored `H × W × C` activation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub data: Tensor,
    /// World pose of cell (0, 0)'s center; rows follow the origin's +y axis.
    pub origin: Pose2,
    pub resolution: f64,
    /// Producing SDV.
    pub frame: u32,
    /// Start time of the newest sweep that produced the map.
    pub timestamp: f64,
}

/// Oriented box with confidence, in the receiver frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: OrientedBox,
    pub score: f64,
}

/// Future box centers at fixed intervals, in the same frame as the paired
/// detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub waypoints: Vec<(f64, f64)>,
}

pub type Outputs = Vec<(Detection, Forecast)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub encoder_hidden: usize,
    pub branch_channels: usize,
    pub blocks: usize,
    pub forecast_steps: usize,
    /// Meters per forecast output unit.
    pub forecast_scale: f64,
    /// Initial detection probability used to set the logit bias.
    pub score_prior: f64,
    pub pre_nms_top_k: usize,
    pub nms_iou: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            encoder_hidden: 16,
            branch_channels: 8,
            blocks: 4,
            forecast_steps: 6,
            forecast_scale: 2.0,
            score_prior: 0.01,
            pre_nms_top_k: 100,
            nms_iou: 0.1,
        }
    }
}

/// Detection channels: logit, dx, dy, log length, log width, sin θ, cos θ.
pub const DET_CHANNELS: usize = 7;
