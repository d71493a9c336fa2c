//! Longitudinal car-following with scheduled stops and lane changes.

use rand::Rng as _;

use super::WorldConfig;
use crate::geom::Pose2;
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub(crate) struct VehicleSpec {
    pub dir: i32,
    pub lane: usize,
    /// Position along the travel direction at t = 0.
    pub s0: f64,
    pub desired_speed: f64,
    pub length: f64,
    pub width: f64,
    pub stop: Option<(f64, f64)>,
    pub lane_change_at: Option<f64>,
}

const LANE_CHANGE_TIME: f64 = 3.0;
const MIN_GAP: f64 = 2.0;
const HEADWAY: f64 = 1.2;
const COMFORT_DECEL: f64 = 2.5;
const MAX_ACCEL: f64 = 1.5;

struct State {
    s: f64,
    v: f64,
    lane_from: f64,
    lane_to: f64,
    target_lane: usize,
    change_start: Option<f64>,
}

fn smoothstep(a: f64) -> f64 {
    let a = a.clamp(0.0, 1.0);
    a * a * (3.0 - 2.0 * a)
}

impl State {
    fn lateral(&self, t: f64) -> f64 {
        match self.change_start {
            Some(t0) => {
                let a = smoothstep((t - t0) / LANE_CHANGE_TIME);
                self.lane_from + a * (self.lane_to - self.lane_from)
            }
            None => self.lane_from,
        }
    }
}

pub(crate) fn sample_size(rng: &mut Rng, truck_probability: f64) -> (f64, f64) {
    if rng.gen::<f64>() < truck_probability {
        (rng.gen_range(8.0..12.0), rng.gen_range(2.4..2.6))
    } else {
        (rng.gen_range(4.2..5.0), rng.gen_range(1.8..2.0))
    }
}

/// Integrates all vehicles jointly at the world tick and returns world-frame
/// trajectories in the order of `specs`.
pub(crate) fn simulate(cfg: &WorldConfig, specs: &[VehicleSpec]) -> Vec<Vec<Pose2>> {
    let steps = (cfg.duration / cfg.tick).round() as usize;
    let mut states: Vec<State> = specs
        .iter()
        .map(|v| {
            let y = cfg.lane_center(v.dir, v.lane);
            State {
                s: v.s0,
                v: v.desired_speed,
                lane_from: y,
                lane_to: y,
                target_lane: v.lane,
                change_start: None,
            }
        })
        .collect();
    let mut traj: Vec<Vec<Pose2>> = vec![Vec::with_capacity(steps + 1); specs.len()];
    let mut prev_heading: Vec<f64> = specs
        .iter()
        .map(|v| if v.dir > 0 { 0.0 } else { std::f64::consts::PI })
        .collect();

    for step in 0..=steps {
        let t = step as f64 * cfg.tick;
        let pos: Vec<(f64, f64)> = states
            .iter()
            .zip(specs)
            .map(|(st, sp)| (sp.dir as f64 * st.s, st.lateral(t)))
            .collect();
        if step > 0 {
            for i in 0..specs.len() {
                let last = *traj[i].last().unwrap();
                let (dx, dy) = (pos[i].0 - last.x, pos[i].1 - last.y);
                if dx.hypot(dy) > 1e-4 {
                    prev_heading[i] = dy.atan2(dx);
                }
            }
        }
        for i in 0..specs.len() {
            traj[i].push(Pose2::new(pos[i].0, pos[i].1, prev_heading[i]));
        }
        // The recorded heading at step k uses the displacement into step k;
        // on the first step use the lane direction.
        if step == steps {
            break;
        }

        // Lane-change triggers.
        for i in 0..specs.len() {
            let sp = &specs[i];
            let Some(tc) = sp.lane_change_at else { continue };
            if states[i].change_start.is_some() || t < tc || t > tc + 2.0 {
                continue;
            }
            let target = if sp.lane + 1 < cfg.lanes_per_direction {
                sp.lane + 1
            } else if sp.lane > 0 {
                sp.lane - 1
            } else {
                continue;
            };
            let clear = (0..specs.len()).all(|j| {
                j == i
                    || specs[j].dir != sp.dir
                    || states[j].target_lane != target
                    || (states[j].s - states[i].s).abs() > 10.0 + specs[j].length
            });
            if clear {
                let st = &mut states[i];
                st.lane_to = cfg.lane_center(sp.dir, target);
                st.target_lane = target;
                st.change_start = Some(t);
            }
        }

        let accel: Vec<f64> = (0..specs.len())
            .map(|i| acceleration(i, t, specs, &states))
            .collect();
        for (st, a) in states.iter_mut().zip(accel) {
            let v_new = (st.v + a * cfg.tick).max(0.0);
            st.s += 0.5 * (st.v + v_new) * cfg.tick;
            st.v = v_new;
        }
        for st in states.iter_mut() {
            if let Some(t0) = st.change_start {
                if t + cfg.tick - t0 >= LANE_CHANGE_TIME {
                    st.lane_from = st.lane_to;
                    st.change_start = None;
                }
            }
        }
    }
    traj
}

fn acceleration(i: usize, t: f64, specs: &[VehicleSpec], states: &[State]) -> f64 {
    let sp = &specs[i];
    let st = &states[i];
    let stopped = matches!(sp.stop, Some((t0, dur)) if t >= t0 && t < t0 + dur);
    let v_des = if stopped { 0.0 } else { sp.desired_speed };
    let mut a = ((v_des - st.v) / 1.0).clamp(-COMFORT_DECEL, MAX_ACCEL);

    // Nearest leader in either the current or the target lane.
    let mut leader: Option<(f64, f64)> = None;
    for (j, other) in states.iter().enumerate() {
        if j == i || specs[j].dir != sp.dir {
            continue;
        }
        let same = other.target_lane == st.target_lane
            || (other.change_start.is_some() && lane_of(other, specs[j].lane) == st.target_lane);
        if !same || other.s <= st.s {
            continue;
        }
        let gap = other.s - st.s - 0.5 * (sp.length + specs[j].length);
        if leader.map_or(true, |(g, _)| gap < g) {
            leader = Some((gap, other.v));
        }
    }
    if let Some((gap, v_lead)) = leader {
        let gap = gap.max(0.1);
        let dv = st.v - v_lead;
        let s_star = MIN_GAP
            + (st.v * HEADWAY + st.v * dv / (2.0 * (MAX_ACCEL * COMFORT_DECEL).sqrt())).max(0.0);
        let follow = MAX_ACCEL * (1.0 - (s_star / gap).powi(2));
        a = a.min(follow);
    }
    a.clamp(-8.0, MAX_ACCEL)
}

fn lane_of(st: &State, original: usize) -> usize {
    if st.change_start.is_some() {
        original
    } else {
        st.target_lane
    }
}
