//! Procedural bird's-eye-view traffic world and its range sensor.

mod io;
mod labels;
mod noise;
mod scenario;
mod sensor;
mod traffic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::geom::{relative_transform, OrientedBox, Pose2, Se2};
pub use io::{read_scenario, write_scenario};
pub use labels::{labels_at, Label, LabelFilter};
pub use noise::{circular_std, perturb_pose, sample_von_mises};
pub use scenario::{generate_scenario, static_occlusion_exists, Scenario};
pub use sensor::{count_points, raycast_sweep, Point, Sweep};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("no scenario with a fully occluded actor after {tries} tries; raise occluder_density (currently {density})")]
    OcclusionCap { tries: u32, density: f64 },
    #[error("time {t} s outside the scenario window [{lo}, {hi}] s")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("unknown actor {0}")]
    UnknownActor(u32),
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("scenario file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WorldError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Vehicle,
    ParkedVehicle,
    Wall,
}

/// Fixed-tick pose sequence starting at t = 0. Static actors carry a single
/// pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tick: f64,
    pub poses: Vec<Pose2>,
}

impl Trajectory {
    pub fn stationary(p: Pose2, tick: f64) -> Self {
        Self { tick, poses: vec![p] }
    }

    /// Linearly interpolated pose, clamped to the recorded span.
    pub fn pose_at(&self, t: f64) -> Pose2 {
        let n = self.poses.len();
        if n == 1 || t <= 0.0 {
            return self.poses[0];
        }
        let f = t / self.tick;
        let i = f.floor() as usize;
        if i + 1 >= n {
            return self.poses[n - 1];
        }
        let a = f - i as f64;
        let (p, q) = (self.poses[i], self.poses[i + 1]);
        let dth = crate::geom::wrap_angle(q.theta - p.theta);
        Pose2::new(
            p.x + a * (q.x - p.x),
            p.y + a * (q.y - p.y),
            p.theta + a * dth,
        )
    }

    /// Central finite-difference velocity.
    pub fn velocity_at(&self, t: f64) -> (f64, f64) {
        if self.poses.len() == 1 {
            return (0.0, 0.0);
        }
        let h = self.tick / 2.0;
        let (a, b) = (self.pose_at(t - h), self.pose_at(t + h));
        let span = (t + h).min(self.end_time()) - (t - h).max(0.0);
        if span <= 0.0 {
            return (0.0, 0.0);
        }
        ((b.x - a.x) / span, (b.y - a.y) / span)
    }

    pub fn end_time(&self) -> f64 {
        self.tick * (self.poses.len() - 1) as f64
    }

    pub fn is_static(&self) -> bool {
        self.poses.len() == 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: u32,
    pub kind: ActorKind,
    pub length: f64,
    pub width: f64,
    pub trajectory: Trajectory,
    pub is_candidate_sdv: bool,
    pub is_sdv: bool,
}

impl Actor {
    pub fn pose_at(&self, t: f64) -> Pose2 {
        self.trajectory.pose_at(t)
    }

    pub fn box_at(&self, t: f64) -> OrientedBox {
        OrientedBox::from_pose(&self.pose_at(t), self.length, self.width)
    }

    pub fn is_vehicle(&self) -> bool {
        matches!(self.kind, ActorKind::Vehicle | ActorKind::ParkedVehicle)
    }

    pub fn is_static(&self) -> bool {
        self.trajectory.is_static()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub rays: usize,
    pub max_range: f64,
    pub period: f64,
    pub sweeps: usize,
    pub rolling_shutter: bool,
    /// Upper bound of the per-SDV sweep phase offset, uniform in `[0, max)`.
    pub max_phase_offset: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rays: 720,
            max_range: 60.0,
            period: 0.1,
            sweeps: 3,
            rolling_shutter: true,
            max_phase_offset: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub duration: f64,
    pub tick: f64,
    pub road_half_length: f64,
    pub lanes_per_direction: usize,
    pub lane_width: f64,
    pub median_width: f64,
    /// Inclusive range of moving vehicles spawned per lane.
    pub vehicles_per_lane: [usize; 2],
    /// Scales curbside parking and median barrier coverage, in `[0, 1]`.
    pub occluder_density: f64,
    pub candidate_fraction: f64,
    pub max_sdvs: usize,
    pub broadcast_range: f64,
    pub truck_probability: f64,
    pub stop_probability: f64,
    pub lane_change_probability: f64,
    pub max_tries: u32,
    /// Detection/evaluation window half extents in the receiver frame.
    pub range_x: f64,
    pub range_y: f64,
    pub sensor: SensorConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            duration: 8.0,
            tick: 0.1,
            road_half_length: 120.0,
            lanes_per_direction: 2,
            lane_width: 3.5,
            median_width: 1.0,
            vehicles_per_lane: [3, 6],
            occluder_density: 1.0,
            candidate_fraction: 1.0,
            max_sdvs: 7,
            broadcast_range: 70.0,
            truck_probability: 0.1,
            stop_probability: 0.2,
            lane_change_probability: 0.3,
            max_tries: 100,
            range_x: 40.0,
            range_y: 20.0,
            sensor: SensorConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(WorldError::Config(m.to_string()));
        if !(self.duration > 0.0 && self.tick > 0.0) {
            return bad("duration and tick must be positive");
        }
        if self.lanes_per_direction == 0 {
            return bad("lanes_per_direction must be at least 1");
        }
        if self.vehicles_per_lane[0] > self.vehicles_per_lane[1] {
            return bad("vehicles_per_lane must be [min, max] with min <= max");
        }
        if !(0.0..=1.0).contains(&self.occluder_density) {
            return bad("occluder_density must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.candidate_fraction) {
            return bad("candidate_fraction must lie in [0, 1]");
        }
        if self.max_sdvs == 0 {
            return bad("max_sdvs must be at least 1 (the ego)");
        }
        if self.sensor.rays == 0 || self.sensor.max_range <= 0.0 || self.sensor.period <= 0.0 {
            return bad("sensor rays, max_range and period must be positive");
        }
        if self.sensor.sweeps == 0 {
            return bad("sensor.sweeps must be at least 1");
        }
        if !(0.0..self.sensor.period).contains(&self.sensor.max_phase_offset)
            && self.sensor.max_phase_offset != 0.0
        {
            return bad("sensor.max_phase_offset must lie in [0, period)");
        }
        if self.range_x <= 0.0 || self.range_y <= 0.0 {
            return bad("range_x and range_y must be positive");
        }
        Ok(())
    }

    /// Lateral centers of the lanes driving toward +x (`dir = 1`) or -x.
    pub fn lane_center(&self, dir: i32, lane: usize) -> f64 {
        let off = self.median_width / 2.0 + self.lane_width * (lane as f64 + 0.5);
        if dir > 0 {
            -off
        } else {
            off
        }
    }

    pub fn curb_offset(&self) -> f64 {
        self.median_width / 2.0 + self.lane_width * self.lanes_per_direction as f64
    }
}
