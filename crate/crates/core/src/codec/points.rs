//! Point-cloud codec: 1 cm Cartesian quantization, second-order prediction
//! along scan order, and adaptive range coding of the residuals.

use super::{AdaptiveModel, Bitstream, CodecError, RangeDecoder, RangeEncoder, Result};
use crate::geom::{relative_transform, Pose2};
use crate::worldsim::{Point, Sweep};

pub const POSITION_STEP: f64 = 0.01;
pub const TIME_STEP: f64 = 1e-4;
/// Reference size of one point stored as three float32 values.
pub const RAW_POINT_BITS: u64 = 96;

const CLASSES: usize = 34;

fn put_u32(enc: &mut RangeEncoder, v: u32) {
    enc.encode_bits(v & 0xffff, 16);
    enc.encode_bits(v >> 16, 16);
}

fn put_f64(enc: &mut RangeEncoder, v: f64) {
    let b = v.to_bits();
    put_u32(enc, b as u32);
    put_u32(enc, (b >> 32) as u32);
}

fn get_u32(dec: &mut RangeDecoder) -> Result<u32> {
    let lo = dec.decode_bits(16)?;
    let hi = dec.decode_bits(16)?;
    Ok(lo | (hi << 16))
}

fn get_f64(dec: &mut RangeDecoder) -> Result<f64> {
    let lo = get_u32(dec)? as u64;
    let hi = get_u32(dec)? as u64;
    Ok(f64::from_bits(lo | (hi << 32)))
}

/// Signed residual as magnitude class, sign bit and the bits below the
/// leading one.
struct ResidualCoder {
    classes: AdaptiveModel,
}

impl ResidualCoder {
    fn new() -> Self {
        Self {
            classes: AdaptiveModel::new(CLASSES),
        }
    }

    fn encode(&mut self, enc: &mut RangeEncoder, r: i64) -> Result<()> {
        let mag = r.unsigned_abs();
        let class = 64 - mag.leading_zeros() as usize;
        if class >= CLASSES {
            return Err(CodecError::SymbolOutOfRange {
                symbol: r,
                alphabet: CLASSES,
            });
        }
        self.classes.encode(enc, class)?;
        if class > 0 {
            enc.encode_bits((r < 0) as u32, 1);
            let mut rest = class as u32 - 1;
            let mut low = mag & ((1u64 << rest) - 1);
            while rest > 0 {
                let n = rest.min(16);
                enc.encode_bits((low & ((1 << n) - 1)) as u32, n);
                low >>= n;
                rest -= n;
            }
        }
        Ok(())
    }

    fn decode(&mut self, dec: &mut RangeDecoder) -> Result<i64> {
        let class = self.classes.decode(dec)?;
        if class == 0 {
            return Ok(0);
        }
        let negative = dec.decode_bits(1)? == 1;
        let total = class as u32 - 1;
        let mut low = 0u64;
        let mut shift = 0;
        while shift < total {
            let n = (total - shift).min(16);
            low |= (dec.decode_bits(n)? as u64) << shift;
            shift += n;
        }
        let mag = (1i64 << total) | low as i64;
        Ok(if negative { -mag } else { mag })
    }
}

fn predict(hist: &[i64]) -> i64 {
    match hist {
        [] => 0,
        [a] => *a,
        [.., a, b] => 2 * b - a,
    }
}

fn quantize(v: f64, step: f64) -> Result<i64> {
    let q = (v / step).round();
    if !q.is_finite() || q.abs() > (1u64 << 40) as f64 {
        return Err(CodecError::Corrupt(format!("value {v} not representable")));
    }
    Ok(q as i64)
}

/// Codes `sweeps` (newest first) with their sensor poses relative to
/// `reference` and start times relative to `reference_time`.
pub fn points_encode(sweeps: &[Sweep], reference: &Pose2, reference_time: f64) -> Result<Bitstream> {
    if sweeps.len() > 255 || sweeps.iter().any(|s| s.points.len() > u16::MAX as usize) {
        return Err(CodecError::Shape("too many sweeps or points".into()));
    }
    let mut enc = RangeEncoder::new();
    enc.encode_bits(sweeps.len() as u32, 8);
    let mut coders = [ResidualCoder::new(), ResidualCoder::new(), ResidualCoder::new()];
    for s in sweeps {
        put_u32(&mut enc, s.sdv);
        let rel = relative_transform(&s.sensor_pose, reference).to_pose();
        for v in [rel.x, rel.y, rel.theta, s.start_time - reference_time] {
            put_f64(&mut enc, v);
        }
        enc.encode_bits(s.points.len() as u32, 16);
        let mut hist: [Vec<i64>; 3] = Default::default();
        for p in &s.points {
            let q = [quantize(p.x, POSITION_STEP)?, quantize(p.y, POSITION_STEP)?, quantize(p.dt, TIME_STEP)?];
            for k in 0..3 {
                coders[k].encode(&mut enc, q[k] - predict(&hist[k]))?;
                hist[k].push(q[k]);
                if hist[k].len() > 2 {
                    hist[k].remove(0);
                }
            }
        }
    }
    Ok(enc.finish())
}

/// Inverse of [`points_encode`]; sensor poses are re-anchored on
/// `reference`, which may be a claimed (noisy) pose. Ground-truth actor ids
/// are not transmitted.
pub fn points_decode(bits: &Bitstream, reference: &Pose2, reference_time: f64) -> Result<Vec<Sweep>> {
    let mut dec = RangeDecoder::new(bits);
    let n = dec.decode_bits(8)? as usize;
    let mut coders = [ResidualCoder::new(), ResidualCoder::new(), ResidualCoder::new()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let sdv = get_u32(&mut dec)?;
        let mut v = [0.0; 4];
        for x in &mut v {
            *x = get_f64(&mut dec)?;
        }
        let rel = Pose2::new(v[0], v[1], v[2]);
        let count = dec.decode_bits(16)? as usize;
        let mut hist: [Vec<i64>; 3] = Default::default();
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let mut q = [0i64; 3];
            for k in 0..3 {
                q[k] = predict(&hist[k]) + coders[k].decode(&mut dec)?;
                hist[k].push(q[k]);
                if hist[k].len() > 2 {
                    hist[k].remove(0);
                }
            }
            points.push(Point {
                x: q[0] as f64 * POSITION_STEP,
                y: q[1] as f64 * POSITION_STEP,
                dt: q[2] as f64 * TIME_STEP,
            });
        }
        if dec.overrun() > 8 {
            return Err(CodecError::Corrupt("point stream ran past its end".into()));
        }
        out.push(Sweep {
            sdv,
            sensor_pose: reference.compose(&rel),
            start_time: reference_time + v[3],
            points,
            actor_ids: Vec::new(),
        });
    }
    Ok(out)
}

pub fn raw_points_bits(sweeps: &[Sweep]) -> u64 {
    sweeps.iter().map(|s| s.points.len() as u64 * RAW_POINT_BITS).sum()
}
