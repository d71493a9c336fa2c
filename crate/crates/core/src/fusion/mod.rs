//! End-to-end strategies mapping a receiver's own sweeps and its delivered
//! messages to final detections and forecasts.

use numcore::{ParamStore, Tape, Tensor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{aggregate, AggregationConfig, NeighborInput};
use crate::channel::{ChannelError, V2VMessage};
use crate::codec::feature::feat_encode_raw;
use crate::codec::outputs::{outputs_decode, outputs_encode};
use crate::codec::points::{points_decode, points_encode};
use crate::codec::{feat_decode, feat_encode, CodecError, FeatureCodecConfig, Frame, PayloadType};
use crate::geom::{relative_transform, OrientedBox, Pose2};
use crate::pnp::{decode_and_nms, encode, nms, output_network, rasterize, sweeps_to_receiver, Detection, FeatureMap, Forecast, GridSpec, ModelConfig, Net, Outputs, RasterPoints};
use crate::rng::Rng;
use crate::worldsim::{Scenario, Sweep, WorldConfig, WorldError};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("strategy {0:?} needs the fusion checkpoint")]
    MissingModel(Strategy),
    #[error("payload {0:?} unexpected here")]
    Payload(PayloadType),
}

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    Raw,
    Output,
    Feature,
    Mixed,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::None, Strategy::Raw, Strategy::Output, Strategy::Feature, Strategy::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Raw => "raw",
            Strategy::Output => "output",
            Strategy::Feature => "feature",
            Strategy::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    /// Payload a sender broadcasts under this strategy; mixed fleets draw
    /// one of the three uniformly.
    pub fn payload_for(self, rng: &mut Rng) -> Option<PayloadType> {
        match self {
            Strategy::None => None,
            Strategy::Raw => Some(PayloadType::Points),
            Strategy::Output => Some(PayloadType::Outputs),
            Strategy::Feature => Some(PayloadType::Features),
            Strategy::Mixed => Some([PayloadType::Points, PayloadType::Features, PayloadType::Outputs][rng.gen_range(0..3)]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Lowest score kept when decoding, so PR curves reach high recall.
    pub score_threshold: f64,
    /// Send features through the learned codec rather than as float32.
    pub compress: bool,
    /// Run the delay-compensation network on received features.
    pub compensate: bool,
    pub forecast_interval: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            compress: false,
            compensate: true,
            forecast_interval: 0.5,
        }
    }
}

/// Configuration and weights shared by all strategies. `single` holds the
/// pretrained single-vehicle model, `fused` the fusion model.
#[derive(Clone, Debug)]
pub struct Models {
    pub grid: GridSpec,
    pub model: ModelConfig,
    pub agg: AggregationConfig,
    pub codec: FeatureCodecConfig,
    pub single: ParamStore,
    pub fused: Option<ParamStore>,
}

impl Models {
    /// Freshly initialized weights; `fused` covers every trainable group.
    pub fn init(grid: GridSpec, model: ModelConfig, agg: AggregationConfig, codec: FeatureCodecConfig, sweeps: usize, seed: u64) -> Self {
        let single = crate::pnp::init_params(&model, sweeps, seed);
        let mut fused = single.clone();
        fused.merge(&crate::aggregate::init_params(model.channels, &agg, seed));
        fused.merge(&crate::codec::feature::init_params(model.channels, &codec, seed));
        Self { grid, model, agg, codec, single, fused: Some(fused) }
    }

    /// Raster channels the backbone expects.
    pub fn model_sweeps(&self) -> usize {
        self.single.get("backbone.conv1.w").map(|w| w.shape()[2]).unwrap_or(0)
    }
}

/// One vehicle's sensing at a sweep start.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleView {
    pub id: u32,
    /// True pose at `timestamp`.
    pub pose: Pose2,
    pub timestamp: f64,
    /// Own sweeps, newest first.
    pub sweeps: Vec<Sweep>,
}

impl VehicleView {
    /// What `sdv` captured with its newest sweep starting at `t`.
    pub fn capture(sc: &Scenario, sdv: u32, t: f64, world: &WorldConfig) -> Result<Self> {
        let sweeps = crate::dataset::sweeps_at(sc, sdv, t, world)?;
        let pose = sc.actor(sdv).map(|a| a.pose_at(t)).ok_or(WorldError::UnknownActor(sdv))?;
        Ok(Self { id: sdv, pose, timestamp: t, sweeps })
    }
}

/// A delivered message with its payload decoded.
#[derive(Clone, Debug, PartialEq)]
pub struct Received {
    pub sender: u32,
    pub pose: Pose2,
    pub timestamp: f64,
    pub payload: Payload,
    pub bits: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Points(Vec<Sweep>),
    Features(FeatureMap),
    Outputs(Outputs),
}

fn raster_of(points: &RasterPoints, grid: &GridSpec) -> Tensor {
    rasterize(points, grid)
}

/// Encoder output for a raster under `store`.
pub fn feature_map(store: &ParamStore, raster: Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let net = Net::frozen(&tape, store);
    let z = encode(&net, tape.constant(raster))?;
    Ok((*tape.value(z)).clone())
}

/// Encoder, output network and decoding on a raster.
pub fn detect(models: &Models, store: &ParamStore, raster: Tensor, cfg: &FusionConfig) -> Result<Outputs> {
    let tape = Tape::new();
    let net = Net::frozen(&tape, store);
    let z = encode(&net, tape.constant(raster))?;
    let (det, fc) = output_network(&net, z)?;
    Ok(decode(models, &tape.value(det), &tape.value(fc), cfg))
}

fn decode(models: &Models, det: &Tensor, fc: &Tensor, cfg: &FusionConfig) -> Outputs {
    let out = decode_and_nms(det, fc, &models.grid, &models.model, cfg.score_threshold, models.model.nms_iou);
    clip(out, &models.grid)
}

fn clip(out: Outputs, grid: &GridSpec) -> Outputs {
    out.into_iter().filter(|(d, _)| grid.contains((d.bbox.cx, d.bbox.cy))).collect()
}

/// Builds the message `view` broadcasts with `kind`. The header carries the
/// true pose; the channel substitutes the claimed one.
pub fn make_message(kind: PayloadType, view: &VehicleView, models: &Models, cfg: &FusionConfig) -> Result<V2VMessage> {
    let payload = match kind {
        PayloadType::Points => points_encode(&view.sweeps, &view.pose, view.timestamp)?,
        PayloadType::Outputs => {
            let raster = raster_of(&sweeps_to_receiver(&view.sweeps, &view.pose), &models.grid);
            outputs_encode(&detect(models, &models.single, raster, cfg)?)?
        }
        PayloadType::Features => {
            let store = models.fused.as_ref().ok_or(FusionError::MissingModel(Strategy::Feature))?;
            let raster = raster_of(&sweeps_to_receiver(&view.sweeps, &view.pose), &models.grid);
            let fm = FeatureMap {
                data: feature_map(store, raster)?,
                origin: models.grid.feature_origin(&view.pose),
                resolution: models.grid.feature_resolution(),
                frame: view.id,
                timestamp: view.timestamp,
            };
            if cfg.compress {
                feat_encode(store, &models.codec, &fm)?
            } else {
                feat_encode_raw(&fm)?
            }
        }
    };
    Ok(V2VMessage {
        sender: view.id,
        pose: view.pose,
        timestamp: view.timestamp,
        payload: Frame::new(kind, payload),
    })
}

pub fn decode_message(msg: &V2VMessage, models: &Models) -> Result<Received> {
    let bits = &msg.payload.payload;
    let payload = match msg.payload.kind {
        PayloadType::Points => Payload::Points(points_decode(bits, &msg.pose, msg.timestamp)?),
        PayloadType::Outputs => Payload::Outputs(outputs_decode(bits)?),
        PayloadType::Features => {
            let store = models.fused.as_ref().unwrap_or(&models.single);
            Payload::Features(feat_decode(store, &models.codec, bits)?)
        }
    };
    Ok(Received {
        sender: msg.sender,
        pose: msg.pose,
        timestamp: msg.timestamp,
        payload,
        bits: msg.bits(),
    })
}

/// Own points plus every received sweep, re-anchored on the claimed poses
/// and binned by sweep age.
pub fn merged_points(own: &VehicleView, received: &[&Received]) -> RasterPoints {
    let mut rp = sweeps_to_receiver(&own.sweeps, &own.pose);
    for r in received {
        if let Payload::Points(sweeps) = &r.payload {
            for (ch, s) in sweeps.iter().enumerate().take(rp.channels.len()) {
                rp.add_sweep(ch, s, &s.sensor_pose, &own.pose);
            }
        }
    }
    rp
}

pub fn no_fusion(own: &VehicleView, models: &Models, cfg: &FusionConfig) -> Result<Outputs> {
    let raster = raster_of(&sweeps_to_receiver(&own.sweeps, &own.pose), &models.grid);
    detect(models, &models.single, raster, cfg)
}

pub fn raw_fusion(own: &VehicleView, received: &[&Received], models: &Models, cfg: &FusionConfig) -> Result<Outputs> {
    let raster = raster_of(&merged_points(own, received), &models.grid);
    detect(models, &models.single, raster, cfg)
}

/// Position along the piecewise-linear path through `center` and the
/// waypoints (spaced `interval` apart), extrapolating the last segment.
pub fn along_forecast(center: (f64, f64), waypoints: &[(f64, f64)], interval: f64, t: f64) -> (f64, f64) {
    let mut path = Vec::with_capacity(waypoints.len() + 1);
    path.push(center);
    path.extend_from_slice(waypoints);
    if path.len() == 1 {
        return center;
    }
    let s = (t / interval).max(0.0);
    let k = (s.floor() as usize).min(path.len() - 2);
    let f = s - k as f64;
    let (a, b) = (path[k], path[k + 1]);
    (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
}

/// Moves sender outputs into the receiver frame and forward by `dt`.
pub fn compensate_outputs(outputs: &Outputs, sender_pose: &Pose2, receiver_pose: &Pose2, dt: f64, interval: f64) -> Outputs {
    let tr = relative_transform(sender_pose, receiver_pose);
    outputs
        .iter()
        .map(|(d, f)| {
            let center = (d.bbox.cx, d.bbox.cy);
            let c = along_forecast(center, &f.waypoints, interval, dt);
            let waypoints: Vec<(f64, f64)> = (1..=f.waypoints.len())
                .map(|k| tr.apply(along_forecast(center, &f.waypoints, interval, k as f64 * interval + dt)))
                .collect();
            let moved = OrientedBox::new(c.0, c.1, d.bbox.length, d.bbox.width, d.bbox.heading).transformed(&tr);
            (Detection { bbox: moved, score: d.score }, Forecast { waypoints })
        })
        .collect()
}

fn merge_outputs(mut base: Outputs, received: &[&Received], own: &VehicleView, models: &Models, cfg: &FusionConfig) -> Outputs {
    // Merge in a fixed order so the final suppression is order independent.
    let mut rs: Vec<&&Received> = received.iter().filter(|r| matches!(r.payload, Payload::Outputs(_))).collect();
    rs.sort_by(|a, b| a.sender.cmp(&b.sender).then(a.timestamp.total_cmp(&b.timestamp)));
    for r in rs {
        if let Payload::Outputs(o) = &r.payload {
            let dt = (own.timestamp - r.timestamp).max(0.0);
            base.extend(compensate_outputs(o, &r.pose, &own.pose, dt, cfg.forecast_interval));
        }
    }
    clip(nms(base, models.model.nms_iou), &models.grid)
}

pub fn output_fusion(own: &VehicleView, received: &[&Received], models: &Models, cfg: &FusionConfig) -> Result<Outputs> {
    let base = no_fusion(own, models, cfg)?;
    Ok(merge_outputs(base, received, own, models, cfg))
}

/// Aggregates received feature maps (nearest `max_neighbors` by claimed
/// position) into the receiver's representation of `raster`.
fn fused_detect(raster: Tensor, own: &VehicleView, received: &[&Received], models: &Models, cfg: &FusionConfig) -> Result<Outputs> {
    let store = models.fused.as_ref().ok_or(FusionError::MissingModel(Strategy::Feature))?;
    let mut feats: Vec<(&Received, &FeatureMap)> = received
        .iter()
        .filter_map(|r| match &r.payload {
            Payload::Features(fm) => Some((*r, fm)),
            _ => None,
        })
        .collect();
    feats.sort_by(|a, b| {
        let (da, db) = (a.0.pose.distance(&own.pose), b.0.pose.distance(&own.pose));
        da.total_cmp(&db).then(a.0.sender.cmp(&b.0.sender))
    });
    feats.truncate(models.agg.max_neighbors);
    let tape = Tape::new();
    let net = Net::frozen(&tape, store);
    let z = encode(&net, tape.constant(raster))?;
    let neighbors: Vec<NeighborInput> = feats
        .iter()
        .map(|(r, fm)| NeighborInput {
            z: tape.constant(fm.data.clone()),
            origin: models.grid.feature_origin(&r.pose),
            timestamp: r.timestamp,
            sdv: r.sender,
            dt: (own.timestamp - r.timestamp).max(0.0),
        })
        .collect();
    let origin = models.grid.feature_origin(&own.pose);
    let fused = aggregate(&net, z, &origin, &neighbors, models.grid.feature_resolution(), cfg.compensate, &models.agg)?;
    let (det, fc) = output_network(&net, fused)?;
    Ok(decode(models, &tape.value(det), &tape.value(fc), cfg))
}

pub fn feature_fusion(own: &VehicleView, received: &[&Received], models: &Models, cfg: &FusionConfig) -> Result<Outputs> {
    let raster = raster_of(&sweeps_to_receiver(&own.sweeps, &own.pose), &models.grid);
    fused_detect(raster, own, received, models, cfg)
}

/// Points are merged into the raster, features aggregated, and decoded
/// outputs merged last. Without feature messages the single-vehicle model
/// runs on the merged raster.
pub fn mixed_fleet(own: &VehicleView, received: &[&Received], models: &Models, cfg: &FusionConfig) -> Result<Outputs> {
    let raster = raster_of(&merged_points(own, received), &models.grid);
    let has_features = received.iter().any(|r| matches!(r.payload, Payload::Features(_)));
    let base = if has_features {
        fused_detect(raster, own, received, models, cfg)?
    } else {
        detect(models, &models.single, raster, cfg)?
    };
    if received.iter().any(|r| matches!(r.payload, Payload::Outputs(_))) {
        Ok(merge_outputs(base, received, own, models, cfg))
    } else {
        Ok(base)
    }
}

/// Dispatches on `strategy`; messages of payload types the strategy does
/// not consume are ignored.
pub fn fuse(strategy: Strategy, own: &VehicleView, received: &[Received], models: &Models, cfg: &FusionConfig) -> Result<Outputs> {
    let of = |k: PayloadType| -> Vec<&Received> {
        received
            .iter()
            .filter(|r| match (&r.payload, k) {
                (Payload::Points(_), PayloadType::Points) => true,
                (Payload::Features(_), PayloadType::Features) => true,
                (Payload::Outputs(_), PayloadType::Outputs) => true,
                _ => false,
            })
            .collect()
    };
    match strategy {
        Strategy::None => no_fusion(own, models, cfg),
        Strategy::Raw => raw_fusion(own, &of(PayloadType::Points), models, cfg),
        Strategy::Output => output_fusion(own, &of(PayloadType::Outputs), models, cfg),
        Strategy::Feature => feature_fusion(own, &of(PayloadType::Features), models, cfg),
        Strategy::Mixed => mixed_fleet(own, &received.iter().collect::<Vec<_>>(), models, cfg),
    }
}
