use numcore::Tensor;

use super::GridSpec;
use crate::geom::{relative_transform, Pose2};
use crate::worldsim::Sweep;

/// Receiver-frame points grouped by raster channel (sweep age, newest
/// first).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RasterPoints {
    pub channels: Vec<Vec<(f64, f64)>>,
}

impl RasterPoints {
    pub fn new(channels: usize) -> Self {
        Self {
            channels: vec![Vec::new(); channels],
        }
    }

    /// Appends `sweep`'s points on channel `ch`, taking them from the frame
    /// `sensor_pose` (the sweep's own pose, or a claimed one) into `receiver`.
    pub fn add_sweep(&mut self, ch: usize, sweep: &Sweep, sensor_pose: &Pose2, receiver: &Pose2) {
        let t = relative_transform(sensor_pose, receiver);
        self.channels[ch].extend(sweep.points.iter().map(|p| t.apply((p.x, p.y))));
    }

    pub fn point_count(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }
}

/// Own sweeps (newest first) into the receiver frame at `receiver`.
pub fn sweeps_to_receiver(sweeps: &[Sweep], receiver: &Pose2) -> RasterPoints {
    let mut rp = RasterPoints::new(sweeps.len());
    for (ch, s) in sweeps.iter().enumerate() {
        rp.add_sweep(ch, s, &s.sensor_pose, receiver);
    }
    rp
}

/// Binary occupancy `[H, W, S]`; row index follows +y, column index +x.
pub fn rasterize(points: &RasterPoints, grid: &GridSpec) -> Tensor {
    let (h, w) = grid.raster_hw();
    let s = points.channels.len();
    let mut out = Tensor::zeros(vec![h, w, s]);
    let res = grid.raster_resolution;
    for (ch, pts) in points.channels.iter().enumerate() {
        for &(x, y) in pts {
            let c = ((x + grid.range_x) / res).floor();
            let r = ((y + grid.range_y) / res).floor();
            if c >= 0.0 && r >= 0.0 && (c as usize) < w && (r as usize) < h {
                out.set3(r as usize, c as usize, ch, 1.0);
            }
        }
    }
    out
}
