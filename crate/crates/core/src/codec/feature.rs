//! Learned feature-map codec: analysis transform, scalar quantization, a
//! factorized per-channel prior, range coding, and the synthesis transform.

use numcore::{ParamStore, Tape, Tensor, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Bitstream, CodecError, FreqTable, RangeDecoder, RangeEncoder, Result};
use crate::geom::Pose2;
use crate::pnp::net::{add_conv, add_conv_scaled};
use crate::pnp::{FeatureMap, Net};
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureCodecConfig {
    pub hidden: usize,
    pub latent_channels: usize,
    /// Quantization indices are clamped to `[-max_index, max_index]`.
    pub max_index: usize,
    pub prob_floor: f64,
    /// Stride-2 stages in the analysis transform (0 to 2).
    pub downsample: usize,
}

impl Default for FeatureCodecConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            latent_channels: 8,
            max_index: 20,
            prob_floor: 1e-6,
            downsample: 0,
        }
    }
}

impl FeatureCodecConfig {
    pub fn alphabet(&self) -> usize {
        2 * self.max_index + 1
    }

    /// Spatial reduction from feature map to latent.
    pub fn factor(&self) -> usize {
        1 << self.downsample.min(2)
    }
}

const HEADER_BYTES: usize = 1 + 2 * 3 + 8 * 3 + 8 + 4 + 8;
/// Bytes ahead of the coded latent in a learned-mode payload.
pub const LEARNED_HEADER_BITS: u64 = HEADER_BYTES as u64 * 8;

/// First payload byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FeatureMode {
    /// Uncompressed float32 values in `[H, W, C]` order.
    Raw = 0,
    Learned = 1,
}

/// `codec.*` parameters for feature maps with `c` channels.
pub fn init_params(c: usize, cfg: &FeatureCodecConfig, seed: u64) -> ParamStore {
    let mut rng = stream(seed, "init-codec", 0);
    let mut s = ParamStore::new();
    let (h, l) = (cfg.hidden, cfg.latent_channels);
    add_conv(&mut s, &mut rng, "codec.analysis1", 3, c, h);
    add_conv_scaled(&mut s, &mut rng, "codec.analysis2", 3, h, l, 2.0);
    add_conv(&mut s, &mut rng, "codec.synthesis1", 3, l, h);
    add_conv_scaled(&mut s, &mut rng, "codec.synthesis2", 3, h, c, 0.5);
    // Start the prior as a discretized unit Gaussian.
    let k = cfg.alphabet();
    let m = cfg.max_index as f64;
    let row: Vec<f64> = (0..k).map(|i| -0.5 * (i as f64 - m).powi(2)).collect();
    let logits = Tensor::from_fn(vec![l, k], |i| row[i % k]);
    s.insert("codec.prior.logits", logits);
    s
}

fn stride(cfg: &FeatureCodecConfig, stage: usize) -> usize {
    if cfg.downsample.min(2) > stage {
        2
    } else {
        1
    }
}

/// Latent `[H/f, W/f, L]` before quantization, `f = cfg.factor()`.
pub fn analysis(net: &Net, cfg: &FeatureCodecConfig, z: Var) -> numcore::Result<Var> {
    let y = net.conv_relu(z, "codec.analysis1", stride(cfg, 0))?;
    net.conv(y, "codec.analysis2", stride(cfg, 1))
}

pub fn synthesis(net: &Net, cfg: &FeatureCodecConfig, y: Var) -> numcore::Result<Var> {
    let t = net.tape;
    let u = if stride(cfg, 1) == 2 { t.upsample2(y)? } else { y };
    let u = net.conv_relu(u, "codec.synthesis1", 1)?;
    let u = if stride(cfg, 0) == 2 { t.upsample2(u)? } else { u };
    net.conv(u, "codec.synthesis2", 1)
}

/// Per-channel probability tables: softmax of the logits, lifted to a floor.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolModel {
    pub probs: Vec<Vec<f64>>,
    tables: Vec<FreqTable>,
}

fn floored_softmax(row: &[f64], floor: f64) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let scale = 1.0 - floor * row.len() as f64;
    e.iter().map(|v| floor + scale * v / s).collect()
}

impl SymbolModel {
    pub fn from_logits(logits: &Tensor, floor: f64) -> Result<Self> {
        let shape = logits.shape();
        if shape.len() != 2 || floor * shape[1] as f64 >= 1.0 {
            return Err(CodecError::Model(format!("bad prior logits {shape:?}")));
        }
        let k = shape[1];
        let probs: Vec<Vec<f64>> = logits.data().chunks(k).map(|r| floored_softmax(r, floor)).collect();
        let tables = probs.iter().map(|p| FreqTable::from_probs(p)).collect::<Result<_>>()?;
        Ok(Self { probs, tables })
    }

    pub fn from_store(store: &ParamStore, cfg: &FeatureCodecConfig) -> Result<Self> {
        let logits = store
            .get("codec.prior.logits")
            .map_err(|e| CodecError::Model(e.to_string()))?;
        Self::from_logits(logits, cfg.prob_floor)
    }

    pub fn channels(&self) -> usize {
        self.probs.len()
    }

    pub fn table(&self, channel: usize) -> &FreqTable {
        &self.tables[channel]
    }

    /// Information content of a symbol grid `[.., L]` under the coder's
    /// integer tables.
    pub fn cost_bits(&self, symbols: &[usize]) -> f64 {
        let l = self.channels();
        symbols.iter().enumerate().map(|(i, &s)| self.tables[i % l].cost_bits(s)).sum()
    }
}

/// Bits of a relaxed latent `y [.., L]` under the floored-softmax prior
/// `logits [L, K]`, interpolating linearly between the two neighbouring
/// integer bins. At integers it equals the discrete cost.
pub fn table_nll(tape: &Tape, y: Var, logits: Var, floor: f64) -> numcore::Result<Var> {
    let yv = tape.value(y);
    let lv = tape.value(logits);
    let (l, k) = (lv.shape()[0], lv.shape()[1]);
    if yv.shape().last() != Some(&l) || k < 2 {
        return Err(numcore::NumError::Shape {
            op: "table_nll",
            detail: format!("latent {:?} vs logits {:?}", yv.shape(), lv.shape()),
        });
    }
    let m = ((k - 1) / 2) as f64;
    let soft: Vec<Vec<f64>> = lv.data().chunks(k).map(|r| floored_softmax(r, 0.0)).collect();
    let scale = 1.0 - floor * k as f64;
    let probs: Vec<Vec<f64>> = soft.iter().map(|r| r.iter().map(|v| floor + scale * v).collect()).collect();
    let n = yv.len();
    let mut bits = vec![0.0; n];
    // (channel, lower bin, fraction, interpolated probability, inside range)
    let mut info = Vec::with_capacity(n);
    for (i, &v) in yv.data().iter().enumerate() {
        let c = i % l;
        let u = (v + m).clamp(0.0, 2.0 * m);
        let j = (u.floor() as usize).min(k - 2);
        let f = u - j as f64;
        let q = (1.0 - f) * probs[c][j] + f * probs[c][j + 1];
        bits[i] = -q.log2();
        info.push((c, j, f, q, v > -m && v < m));
    }
    let out = Tensor::new(yv.shape().to_vec(), bits)?;
    let ln2 = std::f64::consts::LN_2;
    Ok(tape.custom_op(out, &[y, logits], move |g| {
        let mut gy = vec![0.0; n];
        let mut gp = vec![0.0; l * k];
        for (i, &(c, j, f, q, inside)) in info.iter().enumerate() {
            let d = -g.data()[i] / (q * ln2);
            if inside {
                gy[i] = d * (probs[c][j + 1] - probs[c][j]);
            }
            gp[c * k + j] += d * (1.0 - f);
            gp[c * k + j + 1] += d * f;
        }
        let mut gl = vec![0.0; l * k];
        for c in 0..l {
            let s = &soft[c];
            let gps = &gp[c * k..(c + 1) * k];
            let dot: f64 = gps.iter().zip(s).map(|(a, b)| a * b).sum();
            for i in 0..k {
                gl[c * k + i] = scale * s[i] * (gps[i] - dot);
            }
        }
        vec![
            Some(Tensor::new(g.shape().to_vec(), gy).unwrap()),
            Some(Tensor::new(vec![l, k], gl).unwrap()),
        ]
    }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RdParts {
    /// Mean bits per latent symbol.
    pub rate: f64,
    pub mse: f64,
}

/// `rate + λ·MSE(z, ẑ)` with quantization replaced by additive `U(-½, ½)`
/// noise drawn from `rng`.
pub fn rd_loss(net: &Net, cfg: &FeatureCodecConfig, z: Var, lambda: f64, rng: &mut Rng) -> numcore::Result<(Var, RdParts)> {
    let t = net.tape;
    let floor = cfg.prob_floor;
    let y = analysis(net, cfg, z)?;
    let shape = t.shape(y);
    let noise = Tensor::from_fn(shape, |_| rng.gen_range(-0.5..0.5));
    let y_tilde = t.add_const(y, &noise)?;
    let rate = t.mean(table_nll(t, y_tilde, net.p("codec.prior.logits")?, floor)?);
    let z_hat = synthesis(net, cfg, y_tilde)?;
    let mse = t.mean(t.square(t.sub(z_hat, z)?));
    let loss = t.add(rate, t.scale(mse, lambda))?;
    let parts = RdParts {
        rate: t.value(rate).item(),
        mse: t.value(mse).item(),
    };
    Ok((loss, parts))
}

/// Quantized latent symbols of `z`, offset into `0..alphabet`.
pub fn quantize_latent(store: &ParamStore, cfg: &FeatureCodecConfig, z: &Tensor) -> Result<(Vec<usize>, Vec<usize>)> {
    let tape = Tape::new();
    let net = Net::frozen(&tape, store);
    let y = analysis(&net, cfg, tape.constant(z.clone())).map_err(|e| CodecError::Model(e.to_string()))?;
    let yv = tape.value(y);
    let m = cfg.max_index as f64;
    let symbols = yv.data().iter().map(|v| (v.round().clamp(-m, m) + m) as usize).collect();
    Ok((yv.shape().to_vec(), symbols))
}

fn check_dims(z: &Tensor, factor: usize) -> Result<(usize, usize, usize)> {
    let (h, w, c) = z.hwc().map_err(|e| CodecError::Shape(e.to_string()))?;
    if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 || h > u16::MAX as usize || w > u16::MAX as usize || c > u16::MAX as usize {
        return Err(CodecError::Shape(format!("feature map {h}x{w}x{c} must tile by {factor}")));
    }
    Ok((h, w, c))
}

fn header(mode: FeatureMode, fm: &FeatureMap, factor: usize) -> Result<Vec<u8>> {
    let (h, w, c) = check_dims(&fm.data, factor)?;
    let mut head = Vec::with_capacity(HEADER_BYTES);
    head.push(mode as u8);
    for d in [h, w, c] {
        head.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for v in [fm.origin.x, fm.origin.y, fm.origin.theta, fm.resolution] {
        head.extend_from_slice(&v.to_le_bytes());
    }
    head.extend_from_slice(&fm.frame.to_le_bytes());
    head.extend_from_slice(&fm.timestamp.to_le_bytes());
    Ok(head)
}

pub fn feat_encode(store: &ParamStore, cfg: &FeatureCodecConfig, fm: &FeatureMap) -> Result<Bitstream> {
    let mut head = header(FeatureMode::Learned, fm, cfg.factor())?;
    let model = SymbolModel::from_store(store, cfg)?;
    let (_, symbols) = quantize_latent(store, cfg, &fm.data)?;
    let l = model.channels();
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        model.table(i % l).encode(&mut enc, s)?;
    }
    let coded = enc.finish();
    let bit_len = head.len() as u64 * 8 + coded.bit_len;
    head.extend_from_slice(&coded.bytes);
    Ok(Bitstream { bytes: head, bit_len })
}

/// Uncompressed payload: the same header followed by float32 values.
pub fn feat_encode_raw(fm: &FeatureMap) -> Result<Bitstream> {
    let mut b = header(FeatureMode::Raw, fm, 1)?;
    for v in fm.data.data() {
        b.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(Bitstream::from_bytes(b))
}

fn take<const N: usize>(buf: &[u8], at: &mut usize) -> Result<[u8; N]> {
    let end = *at + N;
    let s = buf.get(*at..end).ok_or(CodecError::Truncated {
        needed: end,
        have: buf.len(),
    })?;
    *at = end;
    Ok(s.try_into().unwrap())
}

pub fn feat_decode(store: &ParamStore, cfg: &FeatureCodecConfig, bits: &Bitstream) -> Result<FeatureMap> {
    let b = &bits.bytes;
    let mut at = 0;
    let mode = take::<1>(b, &mut at)?[0];
    let mut dim = || -> Result<usize> { Ok(u16::from_le_bytes(take::<2>(b, &mut at)?) as usize) };
    let (h, w, c) = (dim()?, dim()?, dim()?);
    let mut f64s = [0.0; 4];
    for v in &mut f64s {
        *v = f64::from_le_bytes(take::<8>(b, &mut at)?);
    }
    let frame = u32::from_le_bytes(take::<4>(b, &mut at)?);
    let timestamp = f64::from_le_bytes(take::<8>(b, &mut at)?);
    if h == 0 || w == 0 {
        return Err(CodecError::Corrupt(format!("feature dims {h}x{w}")));
    }
    let origin = Pose2 {
        x: f64s[0],
        y: f64s[1],
        theta: f64s[2],
    };
    if mode == FeatureMode::Raw as u8 {
        let need = at + h * w * c * 4;
        if b.len() < need {
            return Err(CodecError::Truncated { needed: need, have: b.len() });
        }
        let vals = b[at..need].chunks_exact(4).map(|x| f32::from_le_bytes(x.try_into().unwrap()) as f64).collect();
        return Ok(FeatureMap {
            data: Tensor::new(vec![h, w, c], vals).map_err(|e| CodecError::Shape(e.to_string()))?,
            origin,
            resolution: f64s[3],
            frame,
            timestamp,
        });
    }
    if mode != FeatureMode::Learned as u8 {
        return Err(CodecError::Corrupt(format!("unknown feature mode {mode}")));
    }
    let model = SymbolModel::from_store(store, cfg)?;
    let l = model.channels();
    let f = cfg.factor();
    if h % f != 0 || w % f != 0 {
        return Err(CodecError::Corrupt(format!("feature dims {h}x{w} do not tile by {f}")));
    }
    let (lh, lw) = (h / f, w / f);
    let coded = Bitstream {
        bytes: b[at..].to_vec(),
        bit_len: bits.bit_len.saturating_sub(at as u64 * 8),
    };
    let mut dec = RangeDecoder::new(&coded);
    let m = cfg.max_index as f64;
    let mut latent = Vec::with_capacity(lh * lw * l);
    for i in 0..lh * lw * l {
        latent.push(model.table(i % l).decode(&mut dec)? as f64 - m);
    }
    if dec.overrun() > 8 {
        return Err(CodecError::Corrupt("latent stream ran past its end".into()));
    }
    let tape = Tape::new();
    let net = Net::frozen(&tape, store);
    let y = tape.constant(Tensor::new(vec![lh, lw, l], latent).map_err(|e| CodecError::Shape(e.to_string()))?);
    let z = synthesis(&net, cfg, y).map_err(|e| CodecError::Model(e.to_string()))?;
    let data = (*tape.value(z)).clone();
    if data.shape() != [h, w, c] {
        return Err(CodecError::Shape(format!("decoded {:?}, header {h}x{w}x{c}", data.shape())));
    }
    Ok(FeatureMap {
        data,
        origin,
        resolution: f64s[3],
        frame,
        timestamp,
    })
}

/// Size of the uncompressed float32 payload.
pub fn raw_feature_bits(h: usize, w: usize, c: usize) -> u64 {
    (h * w * c * 32) as u64
}
