use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::sensor::{cast, count_points};
use super::traffic::{sample_size, simulate, VehicleSpec};
use super::{Actor, ActorKind, Result, Trajectory, WorldConfig, WorldError};
use crate::geom::Pose2;
use crate::rng::stream;

pub const EGO_ID: u32 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    /// Rejection-sampling attempt that produced this world.
    pub attempt: u32,
    pub duration: f64,
    pub tick: f64,
    /// `[x_min, x_max, y_min, y_max]` of the road area.
    pub extent: [f64; 4],
    pub ego: u32,
    /// Non-parked vehicles within broadcast range of the ego at t = 0.
    pub candidates: Vec<u32>,
    /// Participating SDVs, ego first, then by selection order.
    pub sdvs: Vec<u32>,
    /// Sweep phase offset per actor id (non-zero only for SDVs).
    pub phase: Vec<f64>,
    /// Indexed by actor id.
    pub actors: Vec<Actor>,
}

impl Scenario {
    pub fn actor(&self, id: u32) -> Option<&Actor> {
        self.actors.get(id as usize)
    }

    pub fn is_sdv(&self, id: u32) -> bool {
        self.sdvs.contains(&id)
    }

    pub fn phase_of(&self, id: u32) -> f64 {
        self.phase.get(id as usize).copied().unwrap_or(0.0)
    }
}

/// Builds one world for `seed`, rejecting draws until some vehicle near the
/// ego is fully hidden behind static occluders.
pub fn generate_scenario(cfg: &WorldConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    for attempt in 0..cfg.max_tries {
        let mut sc = build_world(cfg, seed, attempt);
        if static_occlusion_exists(&sc, cfg) {
            select_sdvs(&mut sc, cfg);
            return Ok(sc);
        }
    }
    Err(WorldError::OcclusionCap {
        tries: cfg.max_tries,
        density: cfg.occluder_density,
    })
}

fn build_world(cfg: &WorldConfig, seed: u64, attempt: u32) -> Scenario {
    let mut rng = stream(seed, "world", attempt as u64);
    let half = cfg.road_half_length;
    let mut specs: Vec<VehicleSpec> = vec![VehicleSpec {
        dir: 1,
        lane: 0,
        s0: -30.0,
        desired_speed: 10.0,
        length: 4.6,
        width: 1.9,
        stop: None,
        lane_change_at: None,
    }];
    for dir in [1, -1] {
        for lane in 0..cfg.lanes_per_direction {
            let n = rng.gen_range(cfg.vehicles_per_lane[0]..=cfg.vehicles_per_lane[1]);
            for _ in 0..n {
                let (length, width) = sample_size(&mut rng, cfg.truck_probability);
                let desired_speed = rng.gen_range(7.0..14.0);
                let stop = (rng.gen::<f64>() < cfg.stop_probability)
                    .then(|| (rng.gen_range(0.0..cfg.duration * 0.6), rng.gen_range(1.5..5.0)));
                let lane_change_at = (rng.gen::<f64>() < cfg.lane_change_probability)
                    .then(|| rng.gen_range(0.0..cfg.duration * 0.7));
                // Draws are x positions; `VehicleSpec::s0` is distance along travel.
                let mut placed = None;
                for _ in 0..50 {
                    let s0 = rng.gen_range(-half..half);
                    let free = specs.iter().all(|o| {
                        o.dir != dir
                            || o.lane != lane
                            || (o.s0 * o.dir as f64 - s0).abs()
                                > 0.5 * (o.length + length) + 12.0
                    });
                    if free {
                        placed = Some(s0 * dir as f64);
                        break;
                    }
                }
                if let Some(s0) = placed {
                    specs.push(VehicleSpec {
                        dir,
                        lane,
                        s0,
                        desired_speed,
                        length,
                        width,
                        stop,
                        lane_change_at,
                    });
                }
            }
        }
    }
    let trajectories = simulate(cfg, &specs);
    let mut actors: Vec<Actor> = specs
        .iter()
        .zip(trajectories)
        .enumerate()
        .map(|(i, (sp, poses))| Actor {
            id: i as u32,
            kind: ActorKind::Vehicle,
            length: sp.length,
            width: sp.width,
            trajectory: Trajectory {
                tick: cfg.tick,
                poses,
            },
            is_candidate_sdv: false,
            is_sdv: false,
        })
        .collect();

    let density = cfg.occluder_density;
    let curb = cfg.curb_offset();
    for side in [-1.0f64, 1.0] {
        let heading = if side < 0.0 { 0.0 } else { std::f64::consts::PI };
        let mut x = -half + 3.0;
        while x < half - 3.0 {
            if rng.gen::<f64>() < 0.6 * density {
                let (length, width) = (rng.gen_range(4.2..4.9), rng.gen_range(1.8..1.95));
                let p = Pose2::new(
                    x + rng.gen_range(-0.5..0.5),
                    side * (curb + 0.2 + width / 2.0 + rng.gen_range(0.0..0.3)),
                    heading + rng.gen_range(-0.05..0.05),
                );
                actors.push(static_actor(actors.len(), ActorKind::ParkedVehicle, length, width, p, cfg.tick));
            }
            x += 6.5;
        }
    }
    let seg = 15.0;
    let mut x = -half;
    while x + seg <= half {
        if rng.gen::<f64>() < 0.5 * density {
            let p = Pose2::new(x + seg / 2.0, 0.0, 0.0);
            let w = (cfg.median_width * 0.4).max(0.2);
            actors.push(static_actor(actors.len(), ActorKind::Wall, seg - 1.0, w, p, cfg.tick));
        }
        x += seg;
    }
    let n = actors.len();
    Scenario {
        seed,
        attempt,
        duration: cfg.duration,
        tick: cfg.tick,
        extent: [-half, half, -(curb + 3.0), curb + 3.0],
        ego: EGO_ID,
        candidates: Vec::new(),
        sdvs: vec![EGO_ID],
        phase: vec![0.0; n],
        actors,
    }
}

fn static_actor(id: usize, kind: ActorKind, length: f64, width: f64, p: Pose2, tick: f64) -> Actor {
    Actor {
        id: id as u32,
        kind,
        length,
        width,
        trajectory: Trajectory::stationary(p, tick),
        is_candidate_sdv: false,
        is_sdv: false,
    }
}

/// Candidate SDVs draw a uniform key independent of the fraction, so the
/// SDV sets for increasing fractions are nested.
fn select_sdvs(sc: &mut Scenario, cfg: &WorldConfig) {
    let ego = sc.actors[EGO_ID as usize].pose_at(0.0);
    let mut keyed = Vec::new();
    for a in &sc.actors {
        if a.id == EGO_ID || a.kind != ActorKind::Vehicle {
            continue;
        }
        if a.pose_at(0.0).distance(&ego) <= cfg.broadcast_range {
            let u: f64 = stream(sc.seed, "sdv-key", ((sc.attempt as u64) << 32) | a.id as u64).gen();
            sc.candidates.push(a.id);
            keyed.push((u, a.id));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    sc.sdvs = vec![EGO_ID];
    for (u, id) in keyed {
        if u < cfg.candidate_fraction && sc.sdvs.len() < cfg.max_sdvs {
            sc.sdvs.push(id);
        }
    }
    for &id in &sc.candidates {
        sc.actors[id as usize].is_candidate_sdv = true;
    }
    sc.actors[EGO_ID as usize].is_candidate_sdv = true;
    for &id in &sc.sdvs {
        sc.actors[id as usize].is_sdv = true;
        if cfg.sensor.max_phase_offset > 0.0 && id != EGO_ID {
            sc.phase[id as usize] =
                stream(sc.seed, "phase", id as u64).gen_range(0.0..cfg.sensor.max_phase_offset);
        }
    }
}

/// True when, at some sampled frame, a vehicle inside the ego's evaluation
/// window receives no returns from the ego once only static occluders are
/// considered.
pub fn static_occlusion_exists(sc: &Scenario, cfg: &WorldConfig) -> bool {
    let ego = &sc.actors[EGO_ID as usize];
    let latest = (sc.duration - 3.0).max(0.0);
    let times = [0.3f64.min(latest), latest / 2.0, latest];
    for &t in &times {
        let ego_pose = ego.pose_at(t);
        let inv = ego_pose.transform().inverse();
        for target in &sc.actors {
            if target.id == EGO_ID || !target.is_vehicle() {
                continue;
            }
            let (lx, ly) = inv.apply((target.pose_at(t).x, target.pose_at(t).y));
            if lx.abs() > cfg.range_x || ly.abs() > cfg.range_y {
                continue;
            }
            let sweep = cast(sc, ego, t, &cfg.sensor, |a| {
                a.id == target.id || (a.is_static() && a.kind != ActorKind::Vehicle)
            });
            if count_points(&sweep, target.id) == 0 {
                return true;
            }
        }
    }
    false
}
