//! Per-frame evaluation: senders capture and broadcast, the ego receives
//! through the channel, fuses, and is scored against its labels.

use serde::{Deserialize, Serialize};

use crate::channel::{broadcast, ChannelConfig, V2VMessage};
use crate::codec::PayloadType;
use crate::dataset::{eval_labels, senders_in_range, Dataset, SceneFrames, Split};
use crate::evalkit::{iou_unchecked, EvalFrame};
use crate::fusion::{decode_message, fuse, make_message, FusionConfig, FusionError, Models, Payload, Strategy, VehicleView};
use crate::geom::OrientedBox;
use crate::pnp::Outputs;
use crate::rng::stream;

/// Detections this close to a known SDV are the SDV itself and are not
/// scored.
pub const SDV_MATCH_IOU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub strategy: Strategy,
    pub fusion: FusionConfig,
    pub channel: ChannelConfig,
    /// Share of the scene's other SDVs that participate, taken in
    /// selection order.
    pub sender_fraction: f64,
    pub seed: u64,
    /// Keep the received wire messages in each record.
    #[serde(default)]
    pub keep_wire: bool,
}

impl Setting {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        Self {
            strategy,
            fusion: FusionConfig::default(),
            channel: ChannelConfig::default(),
            sender_fraction: 1.0,
            seed,
            keep_wire: false,
        }
    }
}

/// One evaluated frame plus what went over the air.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub scene: usize,
    pub t: f64,
    pub eval: EvalFrame,
    /// `(sender, payload type, bits)` per delivered message.
    pub messages: Vec<(u32, PayloadType, u64)>,
    /// Received messages as parsed off the wire, when requested.
    pub wire: Vec<V2VMessage>,
}

/// Serializable per-frame output record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    pub heading: f64,
    pub score: f64,
    pub waypoints: Vec<(f64, f64)>,
}

impl FrameRecord {
    pub fn detection_records(&self) -> Vec<DetectionRecord> {
        self.eval
            .detections
            .iter()
            .map(|(d, f)| DetectionRecord {
                scene: self.scene,
                t: self.t,
                x: d.bbox.cx,
                y: d.bbox.cy,
                length: d.bbox.length,
                width: d.bbox.width,
                heading: d.bbox.heading,
                score: d.score,
                waypoints: f.waypoints.clone(),
            })
            .collect()
    }

    pub fn bits(&self) -> u64 {
        self.messages.iter().map(|m| m.2).sum()
    }
}

fn frame_index(scene: usize, t: f64) -> u64 {
    ((scene as u64) << 20) ^ (t * 1000.0).round() as u64
}

/// Runs the ego's view of one frame under `setting`.
pub fn run_frame(models: &Models, data: &Dataset, split: Split, scene: usize, t: f64, setting: &Setting) -> Result<FrameRecord, FusionError> {
    let world = &data.world;
    let sf: &SceneFrames = &data.split(split)[scene];
    let sc = &sf.scenario;
    let own = VehicleView::capture(sc, sc.ego, t, world)?;
    let mut senders = if setting.strategy == Strategy::None {
        Vec::new()
    } else {
        senders_in_range(sc, sc.ego, t, setting.channel.broadcast_range)
    };
    // Participation follows the scene's selection order, not distance.
    if setting.sender_fraction < 1.0 {
        let others: Vec<u32> = sc.sdvs.iter().copied().filter(|&s| s != sc.ego).collect();
        let k = participating(others.len(), setting.sender_fraction);
        senders.retain(|s| others[..k].contains(s));
    }
    let mut wire = Vec::new();
    for s in senders {
        // Streams depend only on the frame and sender, so every strategy
        // sees the same delays, pose noise and drops.
        let mut rng = stream(setting.seed, "link", frame_index(scene, t) ^ ((s as u64) << 40));
        let mut mix = stream(setting.seed, "fleet", frame_index(scene, t) ^ ((s as u64) << 40));
        let Some(kind) = setting.strategy.payload_for(&mut mix) else { continue };
        let delay = setting.channel.sample_delay(&mut rng);
        let view = VehicleView::capture(sc, s, t - delay - sc.phase_of(s), world)?;
        let msg = make_message(kind, &view, models, &setting.fusion)?;
        for d in broadcast(&msg, &[(sc.ego, own.pose)], &setting.channel, &mut rng) {
            wire.push(V2VMessage::parse(&d.message.serialize())?);
        }
    }
    let mut rec = receive_frame(models, data, split, scene, t, setting, &wire)?;
    if setting.keep_wire {
        rec.wire = wire;
    }
    Ok(rec)
}

/// The ego's side of a frame: decodes `wire`, fuses and scores.
pub fn receive_frame(models: &Models, data: &Dataset, split: Split, scene: usize, t: f64, setting: &Setting, wire: &[V2VMessage]) -> Result<FrameRecord, FusionError> {
    let sc = &data.split(split)[scene].scenario;
    let own = VehicleView::capture(sc, sc.ego, t, &data.world)?;
    let mut received = Vec::new();
    let mut messages = Vec::new();
    for m in wire {
        let r = decode_message(m, models)?;
        messages.push((m.sender, payload_type(&r.payload), m.bits()));
        received.push(r);
    }
    let detections = fuse(setting.strategy, &own, &received, models, &setting.fusion)?;
    let inv = own.pose.transform().inverse();
    let sdv_boxes: Vec<OrientedBox> = sc
        .sdvs
        .iter()
        .filter(|&&s| s != sc.ego)
        .filter_map(|&s| sc.actor(s).map(|a| a.box_at(t).transformed(&inv)))
        .collect();
    let detections = strip_sdvs(detections, &sdv_boxes);
    Ok(FrameRecord {
        scene,
        t,
        eval: EvalFrame {
            detections,
            labels: eval_labels(sc, t, &own.sweeps)?,
            sdv_boxes,
        },
        messages,
        wire: Vec::new(),
    })
}

fn payload_type(p: &Payload) -> PayloadType {
    match p {
        Payload::Points(_) => PayloadType::Points,
        Payload::Features(_) => PayloadType::Features,
        Payload::Outputs(_) => PayloadType::Outputs,
    }
}

/// Senders kept out of `n` at `fraction`.
pub fn participating(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction.clamp(0.0, 1.0)) - 1e-9).ceil().max(0.0) as usize
}

/// Drops detections of the SDVs themselves, which carry no label.
pub fn strip_sdvs(out: Outputs, sdv_boxes: &[OrientedBox]) -> Outputs {
    out.into_iter().filter(|(d, _)| sdv_boxes.iter().all(|b| iou_unchecked(&d.bbox, b) < SDV_MATCH_IOU)).collect()
}

/// Every frame of `split`, in order.
pub fn run_split(models: &Models, data: &Dataset, split: Split, setting: &Setting) -> Result<Vec<FrameRecord>, FusionError> {
    data.frames(split).into_iter().map(|(scene, t)| run_frame(models, data, split, scene, t, setting)).collect()
}
