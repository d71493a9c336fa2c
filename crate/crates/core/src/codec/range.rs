//! Byte-oriented range coder with a 56-bit window and carry propagation.
//!
//! The window keeps `range / total ≥ 2^32` for totals up to `2^16`, so the
//! coded length tracks the model's information content to a few bits per
//! stream. The final interval is closed with the shortest representable
//! value and trailing zero bits are not stored; the decoder reads missing
//! bits as zero.

use super::{Bitstream, CodecError, Result};

const WINDOW_BITS: u32 = 56;
const TOP: u64 = 1 << WINDOW_BITS;
const BOT: u64 = 1 << (WINDOW_BITS - 8);
const MASK: u64 = TOP - 1;
/// Largest supported frequency total.
pub const MAX_TOTAL: u32 = 1 << 16;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: MASK,
            cache: 0,
            pending: 0,
            started: false,
            out: Vec::new(),
        }
    }

    /// Narrows to `[cum, cum + freq) / total`.
    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && cum + freq <= total && total <= MAX_TOTAL);
        let r = self.range / total as u64;
        self.low += r * cum as u64;
        self.range = r * freq as u64;
        while self.range < BOT {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes `bits` raw bits (at most 16) with a uniform model.
    pub fn encode_bits(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 16 && value < (1 << bits));
        if bits > 0 {
            self.encode(value, 1, 1 << bits);
        }
    }

    fn shift_low(&mut self) {
        let carry = (self.low >> WINDOW_BITS) as u8;
        if self.low < (0xFF << (WINDOW_BITS - 8)) || carry != 0 {
            if self.started {
                self.out.push(self.cache.wrapping_add(carry));
            } else {
                // The byte above the initial window is always zero.
                debug_assert_eq!(self.cache.wrapping_add(carry), 0);
                self.started = true;
            }
            for _ in 0..self.pending {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = ((self.low >> (WINDOW_BITS - 8)) & 0xFF) as u8;
        } else {
            self.pending += 1;
        }
        self.low = (self.low << 8) & MASK;
    }

    pub fn finish(mut self) -> Bitstream {
        // Pick the value in [low, low + range) with the most trailing zeros.
        let hi = self.low + self.range - 1;
        for k in (0..=WINDOW_BITS).rev() {
            let m = (1u64 << k) - 1;
            let v = (self.low + m) & !m;
            if v <= hi {
                self.low = v;
                break;
            }
        }
        for _ in 0..(WINDOW_BITS / 8 + 1) {
            self.shift_low();
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        let bit_len = match self.out.last() {
            None => 0,
            Some(b) => self.out.len() as u64 * 8 - b.trailing_zeros() as u64,
        };
        Bitstream {
            bytes: self.out,
            bit_len,
        }
    }
}

pub struct RangeDecoder<'a> {
    code: u64,
    range: u64,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bits: &'a Bitstream) -> Self {
        let mut d = Self {
            code: 0,
            range: MASK,
            bytes: &bits.bytes,
            pos: 0,
        };
        for _ in 0..WINDOW_BITS / 8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Scaled target in `[0, total)`; follow with [`Self::consume`].
    pub fn target(&mut self, total: u32) -> u32 {
        let r = self.range / total as u64;
        ((self.code / r).min(total as u64 - 1)) as u32
    }

    pub fn consume(&mut self, cum: u32, freq: u32, total: u32) -> Result<()> {
        let r = self.range / total as u64;
        let lo = r * cum as u64;
        if lo > self.code {
            return Err(CodecError::Corrupt("range decoder desynchronized".into()));
        }
        self.code -= lo;
        self.range = r * freq as u64;
        if self.code >= self.range {
            return Err(CodecError::Corrupt("range decoder desynchronized".into()));
        }
        while self.range < BOT {
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32> {
        if bits == 0 {
            return Ok(0);
        }
        let v = self.target(1 << bits);
        self.consume(v, 1, 1 << bits)?;
        Ok(v)
    }

    /// Bytes consumed past the end of the stored stream are implicit zeros.
    pub fn overrun(&self) -> usize {
        self.pos.saturating_sub(self.bytes.len())
    }
}

/// Static cumulative frequency table with total `2^16`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqTable {
    cum: Vec<u32>,
}

impl FreqTable {
    /// Quantizes probabilities so every symbol keeps a count of at least one
    /// and the counts sum exactly to [`MAX_TOTAL`].
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let k = probs.len();
        if k == 0 || k as u32 > MAX_TOTAL / 2 {
            return Err(CodecError::Model(format!("alphabet size {k} unsupported")));
        }
        let sum: f64 = probs.iter().sum();
        if !(sum > 0.0) || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CodecError::Model("probabilities must be finite and non-negative".into()));
        }
        let spare = (MAX_TOTAL - k as u32) as f64;
        let mut counts: Vec<u32> = probs.iter().map(|p| 1 + (p / sum * spare).floor() as u32).collect();
        let mut left = MAX_TOTAL - counts.iter().sum::<u32>();
        // Hand leftovers to the largest fractional remainders, ties by index.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let fa = (probs[a] / sum * spare).fract();
            let fb = (probs[b] / sum * spare).fract();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut i = 0;
        while left > 0 {
            counts[order[i % k]] += 1;
            left -= 1;
            i += 1;
        }
        Self::from_counts(&counts)
    }

    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        if counts.iter().any(|&c| c == 0) {
            return Err(CodecError::Model("zero frequency".into()));
        }
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &c in counts {
            acc += c;
            cum.push(acc);
        }
        if acc > MAX_TOTAL {
            return Err(CodecError::Model(format!("frequency total {acc} exceeds {MAX_TOTAL}")));
        }
        Ok(Self { cum })
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().unwrap()
    }

    pub fn freq(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    /// Information content `−log2(freq / total)` of symbol `s`.
    pub fn cost_bits(&self, s: usize) -> f64 {
        -(self.freq(s) as f64 / self.total() as f64).log2()
    }

    pub fn encode(&self, enc: &mut RangeEncoder, s: usize) -> Result<()> {
        if s >= self.len() {
            return Err(CodecError::SymbolOutOfRange {
                symbol: s as i64,
                alphabet: self.len(),
            });
        }
        enc.encode(self.cum[s], self.freq(s), self.total());
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder) -> Result<usize> {
        let v = dec.target(self.total());
        let s = self.cum.partition_point(|&c| c <= v) - 1;
        dec.consume(self.cum[s], self.freq(s), self.total())?;
        Ok(s)
    }
}

/// Frequency counts that adapt as symbols are coded; encoder and decoder
/// evolve identically.
#[derive(Clone, Debug)]
pub struct AdaptiveModel {
    counts: Vec<u32>,
    total: u32,
    increment: u32,
    limit: u32,
}

impl AdaptiveModel {
    pub fn new(alphabet: usize) -> Self {
        Self {
            counts: vec![1; alphabet],
            total: alphabet as u32,
            increment: 24,
            limit: MAX_TOTAL,
        }
    }

    fn cum(&self, s: usize) -> u32 {
        self.counts[..s].iter().sum()
    }

    fn update(&mut self, s: usize) {
        self.counts[s] += self.increment;
        self.total += self.increment;
        if self.total > self.limit {
            self.total = 0;
            for c in &mut self.counts {
                *c = (*c + 1) / 2;
                self.total += *c;
            }
        }
    }

    pub fn encode(&mut self, enc: &mut RangeEncoder, s: usize) -> Result<()> {
        if s >= self.counts.len() {
            return Err(CodecError::SymbolOutOfRange {
                symbol: s as i64,
                alphabet: self.counts.len(),
            });
        }
        enc.encode(self.cum(s), self.counts[s], self.total);
        self.update(s);
        Ok(())
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<usize> {
        let v = dec.target(self.total);
        let mut acc = 0;
        let mut s = 0;
        while acc + self.counts[s] <= v {
            acc += self.counts[s];
            s += 1;
        }
        dec.consume(acc, self.counts[s], self.total)?;
        self.update(s);
        Ok(s)
    }
}

/// Codes every symbol under one static table.
pub fn range_encode(symbols: &[usize], model: &FreqTable) -> Result<Bitstream> {
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        model.encode(&mut enc, s)?;
    }
    Ok(enc.finish())
}

pub fn range_decode(bits: &Bitstream, model: &FreqTable, n: usize) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bits);
    (0..n).map(|_| model.decode(&mut dec)).collect()
}
