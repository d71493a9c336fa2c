//! Occlusion-aware planar range sensor.

use serde::{Deserialize, Serialize};

use super::{Actor, Result, Scenario, SensorConfig, WorldError};
use crate::geom::{OrientedBox, Pose2};

/// One return, in the sensor frame at sweep start, with its time offset
/// inside the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub sdv: u32,
    /// World pose of the sensor at `start_time`.
    pub sensor_pose: Pose2,
    pub start_time: f64,
    pub points: Vec<Point>,
    /// Ground-truth actor hit by each point (parallel to `points`).
    pub actor_ids: Vec<u32>,
}

impl Sweep {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Number of returns in `sweep` that landed on `actor`.
pub fn count_points(sweep: &Sweep, actor: u32) -> usize {
    sweep.actor_ids.iter().filter(|&&a| a == actor).count()
}

/// Casts one full revolution starting at `t` from SDV `sdv_id`.
pub fn raycast_sweep(scenario: &Scenario, sdv_id: u32, t: f64, cfg: &SensorConfig) -> Result<Sweep> {
    let sensor = scenario
        .actor(sdv_id)
        .ok_or(WorldError::UnknownActor(sdv_id))?;
    Ok(cast(scenario, sensor, t, cfg, |_| true))
}

pub(crate) fn cast(
    scenario: &Scenario,
    sensor: &Actor,
    t: f64,
    cfg: &SensorConfig,
    include: impl Fn(&Actor) -> bool,
) -> Sweep {
    let start_pose = sensor.pose_at(t);
    let reach = cfg.max_range + 15.0;
    let candidates: Vec<&Actor> = scenario
        .actors
        .iter()
        .filter(|a| a.id != sensor.id && include(a))
        .filter(|a| {
            // Coarse gate on the pose over the sweep interval.
            let p0 = a.pose_at(t);
            let p1 = a.pose_at(t + cfg.period);
            start_pose.distance(&p0).min(start_pose.distance(&p1)) <= reach
        })
        .collect();
    let static_boxes: Vec<Option<OrientedBox>> = candidates
        .iter()
        .map(|a| a.is_static().then(|| a.box_at(0.0)))
        .collect();
    let to_start = start_pose.transform().inverse();
    let mut points = Vec::new();
    let mut ids = Vec::new();
    let step = 2.0 * std::f64::consts::PI / cfg.rays as f64;
    let mut boxes: Vec<OrientedBox> = static_boxes
        .iter()
        .map(|b| b.unwrap_or(OrientedBox::new(0.0, 0.0, 1.0, 1.0, 0.0)))
        .collect();
    let mut last_time = f64::NAN;
    for j in 0..cfg.rays {
        let dt = if cfg.rolling_shutter {
            cfg.period * j as f64 / cfg.rays as f64
        } else {
            0.0
        };
        let tj = t + dt;
        if tj != last_time {
            for (k, a) in candidates.iter().enumerate() {
                if static_boxes[k].is_none() {
                    boxes[k] = a.box_at(tj);
                }
            }
            last_time = tj;
        }
        let pose = if cfg.rolling_shutter {
            sensor.pose_at(tj)
        } else {
            start_pose
        };
        let ang = pose.theta + j as f64 * step;
        let dir = (ang.cos(), ang.sin());
        let origin = (pose.x, pose.y);
        let mut best: Option<(f64, u32)> = None;
        for (k, b) in boxes.iter().enumerate() {
            if let Some(d) = b.ray_hit(origin, dir) {
                if d <= cfg.max_range && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, candidates[k].id));
                }
            }
        }
        if let Some((d, id)) = best {
            let world = (origin.0 + d * dir.0, origin.1 + d * dir.1);
            let local = to_start.apply(world);
            points.push(Point {
                x: local.0,
                y: local.1,
                dt,
            });
            ids.push(id);
        }
    }
    Sweep {
        sdv: sensor.id,
        sensor_pose: start_pose,
        start_time: t,
        points,
        actor_ids: ids,
    }
}
