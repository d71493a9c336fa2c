//! Fixed-point codec for detections and their forecasts.

use super::{Bitstream, CodecError, Result};
use crate::geom::{wrap_angle, OrientedBox};
use crate::pnp::{Detection, Forecast, Outputs};

pub const POSITION_STEP: f64 = 0.01;
pub const SIZE_STEP: f64 = 0.01;
pub const ANGLE_STEP: f64 = 0.01;
pub const SCORE_STEP: f64 = 1.0 / 255.0;
/// Waypoints are coded as steps from the previous reconstructed waypoint.
pub const WAYPOINT_STEP: f64 = 0.1;

const HEADER_BYTES: usize = 3;

pub fn detection_bytes(steps: usize) -> usize {
    11 + 2 * steps
}

fn q16(v: f64, step: f64) -> i16 {
    (v / step).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

fn qu16(v: f64, step: f64) -> u16 {
    (v / step).round().clamp(1.0, u16::MAX as f64) as u16
}

/// Codes outputs given in the sender's vehicle frame. Values beyond a
/// field's range saturate.
pub fn outputs_encode(outputs: &Outputs) -> Result<Bitstream> {
    let steps = outputs.first().map_or(0, |(_, f)| f.waypoints.len());
    if outputs.len() > u16::MAX as usize || steps > u8::MAX as usize {
        return Err(CodecError::Shape("too many outputs".into()));
    }
    if outputs.iter().any(|(_, f)| f.waypoints.len() != steps) {
        return Err(CodecError::Shape("forecasts differ in length".into()));
    }
    let mut b = Vec::with_capacity(HEADER_BYTES + outputs.len() * detection_bytes(steps));
    b.extend_from_slice(&(outputs.len() as u16).to_le_bytes());
    b.push(steps as u8);
    for (d, f) in outputs {
        let x = q16(d.bbox.cx, POSITION_STEP);
        let y = q16(d.bbox.cy, POSITION_STEP);
        b.extend_from_slice(&x.to_le_bytes());
        b.extend_from_slice(&y.to_le_bytes());
        b.extend_from_slice(&qu16(d.bbox.length, SIZE_STEP).to_le_bytes());
        b.extend_from_slice(&qu16(d.bbox.width, SIZE_STEP).to_le_bytes());
        b.extend_from_slice(&q16(wrap_angle(d.bbox.heading), ANGLE_STEP).to_le_bytes());
        b.push((d.score.clamp(0.0, 1.0) / SCORE_STEP).round() as u8);
        let mut prev = (x as f64 * POSITION_STEP, y as f64 * POSITION_STEP);
        for &(wx, wy) in &f.waypoints {
            let dx = ((wx - prev.0) / WAYPOINT_STEP).round().clamp(-127.0, 127.0);
            let dy = ((wy - prev.1) / WAYPOINT_STEP).round().clamp(-127.0, 127.0);
            b.push(dx as i8 as u8);
            b.push(dy as i8 as u8);
            prev = (prev.0 + dx * WAYPOINT_STEP, prev.1 + dy * WAYPOINT_STEP);
        }
    }
    Ok(Bitstream::from_bytes(b))
}

pub fn outputs_decode(bits: &Bitstream) -> Result<Outputs> {
    let b = &bits.bytes;
    if b.len() < HEADER_BYTES {
        return Err(CodecError::Truncated {
            needed: HEADER_BYTES,
            have: b.len(),
        });
    }
    let n = u16::from_le_bytes([b[0], b[1]]) as usize;
    let steps = b[2] as usize;
    let per = detection_bytes(steps);
    let needed = HEADER_BYTES + n * per;
    if b.len() < needed {
        return Err(CodecError::Truncated { needed, have: b.len() });
    }
    let i16_at = |o: usize| i16::from_le_bytes([b[o], b[o + 1]]) as f64;
    let u16_at = |o: usize| u16::from_le_bytes([b[o], b[o + 1]]) as f64;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let o = HEADER_BYTES + k * per;
        let cx = i16_at(o) * POSITION_STEP;
        let cy = i16_at(o + 2) * POSITION_STEP;
        let bbox = OrientedBox::new(cx, cy, u16_at(o + 4) * SIZE_STEP, u16_at(o + 6) * SIZE_STEP, i16_at(o + 8) * ANGLE_STEP);
        let score = b[o + 10] as f64 * SCORE_STEP;
        let mut prev = (cx, cy);
        let mut waypoints = Vec::with_capacity(steps);
        for s in 0..steps {
            let dx = b[o + 11 + 2 * s] as i8 as f64;
            let dy = b[o + 12 + 2 * s] as i8 as f64;
            prev = (prev.0 + dx * WAYPOINT_STEP, prev.1 + dy * WAYPOINT_STEP);
            waypoints.push(prev);
        }
        out.push((Detection { bbox, score }, Forecast { waypoints }));
    }
    Ok(out)
}
