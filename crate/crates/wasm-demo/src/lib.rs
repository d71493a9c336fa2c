//! Browser bindings: an IoU pivot sweep, a simulated scene seen by the ego's
//! LiDAR with a point-codec round trip, and link delay for a payload size.

use v2v_core::channel::transmission_delay;
use v2v_core::codec::points::{points_decode, points_encode, raw_points_bits};
use v2v_core::evalkit;
use v2v_core::worldsim::{generate_scenario, raycast_sweep, ActorKind, Scenario, Sweep, WorldConfig};
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Flat `[heading_deg, iou, ...]` over `n` headings in `[0, 180)` for a
/// `length × width` box `pivot` metres from a pivot, against its copy rotated
/// `rotation_deg` about the pivot.
#[wasm_bindgen]
pub fn pivot_sweep(length: f64, width: f64, pivot: f64, rotation_deg: f64, n: usize) -> Vec<f64> {
    evalkit::pivot_sweep(length, width, pivot, rotation_deg.to_radians(), n.max(1))
        .into_iter()
        .flat_map(|(h, iou)| [h.to_degrees(), iou])
        .collect()
}

/// Milliseconds to send `bits` at `mbps`.
#[wasm_bindgen]
pub fn transmission_delay_ms(bits: f64, mbps: f64) -> f64 {
    1e3 * transmission_delay(bits.max(0.0) as u64, mbps * 1e6)
}

#[wasm_bindgen]
pub struct Scene {
    world: WorldConfig,
    scenario: Scenario,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Scene, JsValue> {
        let world = WorldConfig::default();
        let scenario = generate_scenario(&world, seed).map_err(js)?;
        Ok(Scene { world, scenario })
    }

    pub fn duration(&self) -> f64 {
        self.scenario.duration
    }

    fn sweep(&self, t: f64) -> Result<Sweep, JsValue> {
        raycast_sweep(&self.scenario, self.scenario.ego, t, &self.world.sensor).map_err(js)
    }

    /// Ego returns at `t` as flat `[x, y, ...]` in the ego frame.
    pub fn points(&self, t: f64) -> Result<Vec<f64>, JsValue> {
        Ok(self.sweep(t)?.points.iter().flat_map(|p| [p.x, p.y]).collect())
    }

    /// Actor boxes at `t` in the ego sensor frame, flat
    /// `[cx, cy, length, width, heading, kind, ...]` with kind 0 = other,
    /// 1 = SDV, 2 = ego, 3 = wall.
    pub fn boxes(&self, t: f64) -> Result<Vec<f64>, JsValue> {
        let sc = &self.scenario;
        let inv = self.sweep(t)?.sensor_pose.transform().inverse();
        Ok(sc
            .actors
            .iter()
            .flat_map(|a| {
                let b = a.box_at(t).transformed(&inv);
                let kind = if a.id == sc.ego {
                    2.0
                } else if a.kind == ActorKind::Wall {
                    3.0
                } else if a.is_sdv {
                    1.0
                } else {
                    0.0
                };
                [b.cx, b.cy, b.length, b.width, b.heading, kind]
            })
            .collect())
    }

    /// Encodes and decodes the ego sweep at `t`: `[raw_bits, coded_bits,
    /// max_abs_error_m]`.
    pub fn codec_round_trip(&self, t: f64) -> Result<Vec<f64>, JsValue> {
        let sweep = self.sweep(t)?;
        let sweeps = [sweep];
        let pose = sweeps[0].sensor_pose;
        let bits = points_encode(&sweeps, &pose, t).map_err(js)?;
        let back = points_decode(&bits, &pose, t).map_err(js)?;
        let mut err: f64 = 0.0;
        for (a, b) in sweeps[0].points.iter().zip(&back[0].points) {
            err = err.max((a.x - b.x).abs()).max((a.y - b.y).abs());
        }
        Ok(vec![raw_points_bits(&sweeps) as f64, bits.bit_len as f64, err])
    }
}
