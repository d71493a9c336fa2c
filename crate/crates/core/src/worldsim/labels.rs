use super::{ActorKind, Result, Scenario, WorldError};
use crate::geom::OrientedBox;

/// Ground truth for one vehicle: current box and future centers, all in the
/// world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Label {
    pub actor: u32,
    pub kind: ActorKind,
    pub bbox: OrientedBox,
    pub waypoints: Vec<(f64, f64)>,
    pub speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelFilter {
    pub horizon: f64,
    pub interval: f64,
    pub range_x: f64,
    pub range_y: f64,
    /// Drop every SDV (evaluation) rather than only the receiver (training).
    pub exclude_sdvs: bool,
}

impl Default for LabelFilter {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            interval: 0.5,
            range_x: 40.0,
            range_y: 20.0,
            exclude_sdvs: true,
        }
    }
}

impl LabelFilter {
    pub fn steps(&self) -> usize {
        (self.horizon / self.interval).round() as usize
    }
}

/// Labels of vehicles whose center lies inside the receiver's window at `t`.
pub fn labels_at(sc: &Scenario, receiver: u32, t: f64, filter: &LabelFilter) -> Result<Vec<Label>> {
    if t < 0.0 || t + filter.horizon > sc.duration + 1e-9 {
        return Err(WorldError::TimeOutOfRange {
            t,
            lo: 0.0,
            hi: sc.duration - filter.horizon,
        });
    }
    let rx = sc.actor(receiver).ok_or(WorldError::UnknownActor(receiver))?;
    let inv = rx.pose_at(t).transform().inverse();
    let steps = filter.steps();
    let mut out = Vec::new();
    for a in &sc.actors {
        if !a.is_vehicle() || a.id == receiver || (filter.exclude_sdvs && sc.is_sdv(a.id)) {
            continue;
        }
        let bbox = a.box_at(t);
        let (lx, ly) = inv.apply((bbox.cx, bbox.cy));
        if lx.abs() > filter.range_x || ly.abs() > filter.range_y {
            continue;
        }
        let waypoints = (1..=steps)
            .map(|k| {
                let p = a.pose_at(t + k as f64 * filter.interval);
                (p.x, p.y)
            })
            .collect();
        let (vx, vy) = a.trajectory.velocity_at(t);
        out.push(Label {
            actor: a.id,
            kind: a.kind,
            bbox,
            waypoints,
            speed: vx.hypot(vy),
        });
    }
    Ok(out)
}
