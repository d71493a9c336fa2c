//! V2V message envelope, broadcast gating, impairments and delivery order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Frame};
use crate::geom::Pose2;
use crate::rng::Rng;
use crate::worldsim::perturb_pose;

pub const MAGIC: &[u8; 4] = b"V2VM";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 4 + 1 + 4 + 3 * 8 + 8;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("truncated message: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message version {0}")]
    UnknownVersion(u8),
    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after payload frame")]
    Trailing(usize),
    #[error(transparent)]
    Codec(CodecError),
    #[error("invalid channel config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

impl From<CodecError> for ChannelError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Checksum { stored, computed } => ChannelError::Checksum { stored, computed },
            CodecError::Truncated { needed, have } => ChannelError::Truncated {
                needed: needed + HEADER_BYTES,
                have: have + HEADER_BYTES,
            },
            other => ChannelError::Codec(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct V2VMessage {
    pub sender: u32,
    /// Pose claimed by the sender, possibly perturbed.
    pub pose: Pose2,
    /// Start time of the sweep the payload was computed from.
    pub timestamp: f64,
    pub payload: Frame,
}

impl V2VMessage {
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + self.payload.encoded_len()
    }

    pub fn bits(&self) -> u64 {
        self.encoded_len() as u64 * 8
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.sender.to_le_bytes());
        for v in [self.pose.x, self.pose.y, self.pose.theta, self.timestamp] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.payload.to_bytes());
        out
    }

    pub fn parse(buf: &[u8]) -> Result<Self> {
        if buf.len() < HEADER_BYTES {
            return Err(ChannelError::Truncated {
                needed: HEADER_BYTES,
                have: buf.len(),
            });
        }
        let magic: [u8; 4] = buf[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(ChannelError::BadMagic(magic));
        }
        if buf[4] != VERSION {
            return Err(ChannelError::UnknownVersion(buf[4]));
        }
        let sender = u32::from_le_bytes(buf[5..9].try_into().unwrap());
        let f = |i: usize| f64::from_le_bytes(buf[9 + 8 * i..17 + 8 * i].try_into().unwrap());
        let (payload, used) = Frame::parse(&buf[HEADER_BYTES..])?;
        let rest = buf.len() - HEADER_BYTES - used;
        if rest != 0 {
            return Err(ChannelError::Trailing(rest));
        }
        Ok(Self {
            sender,
            pose: Pose2 {
                x: f(0),
                y: f(1),
                theta: f(2),
            },
            timestamp: f(3),
            payload,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub broadcast_range: f64,
    pub data_rate: f64,
    /// Range at which `data_rate` is quoted; informational.
    pub rate_range: f64,
    /// Injected delay is `U(0, max_delay)` seconds.
    pub max_delay: f64,
    pub position_sigma: f64,
    /// Heading noise standard deviation in degrees; von Mises with
    /// `κ = 1/σ²`.
    pub heading_sigma_deg: f64,
    pub drop_probability: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            broadcast_range: 70.0,
            data_rate: 25e6,
            rate_range: 120.0,
            max_delay: 0.0,
            position_sigma: 0.0,
            heading_sigma_deg: 0.0,
            drop_probability: 0.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ChannelError::Config(m.into()));
        if !(self.broadcast_range > 0.0) {
            return bad("broadcast_range must be positive");
        }
        if !(self.data_rate > 0.0) {
            return bad("data_rate must be positive");
        }
        if !(self.max_delay >= 0.0) || !(self.position_sigma >= 0.0) || !(self.heading_sigma_deg >= 0.0) {
            return bad("delay and noise parameters must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad("drop_probability must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn heading_kappa(&self) -> f64 {
        let s = self.heading_sigma_deg.to_radians();
        if s == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (s * s)
        }
    }

    pub fn noisy(&self) -> bool {
        self.position_sigma > 0.0 || self.heading_sigma_deg > 0.0
    }

    pub fn in_range(&self, a: &Pose2, b: &Pose2) -> bool {
        a.distance(b) <= self.broadcast_range
    }

    pub fn sample_delay(&self, rng: &mut Rng) -> f64 {
        if self.max_delay == 0.0 {
            0.0
        } else {
            rng.gen_range(0.0..self.max_delay)
        }
    }

    /// Header pose as the sender reports it.
    pub fn claim_pose(&self, truth: &Pose2, rng: &mut Rng) -> Pose2 {
        if self.noisy() {
            perturb_pose(truth, self.position_sigma, self.heading_kappa(), rng)
        } else {
            *truth
        }
    }
}

pub fn transmission_delay(bits: u64, rate: f64) -> f64 {
    bits as f64 / rate
}

#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub receiver: u32,
    pub message: V2VMessage,
    pub delay: f64,
    pub arrival: f64,
}

/// Sends `msg` (carrying the sender's true pose) to every receiver within
/// range at send time. Each delivery draws its drop, delay and claimed pose
/// in receiver order.
pub fn broadcast(msg: &V2VMessage, receivers: &[(u32, Pose2)], cfg: &ChannelConfig, rng: &mut Rng) -> Vec<Delivery> {
    let mut out = Vec::new();
    let tx = transmission_delay(msg.bits(), cfg.data_rate);
    for (id, pose) in receivers {
        if *id == msg.sender || !cfg.in_range(&msg.pose, pose) {
            continue;
        }
        let dropped = cfg.drop_probability > 0.0 && rng.gen_bool(cfg.drop_probability);
        let delay = cfg.sample_delay(rng);
        let claimed = cfg.claim_pose(&msg.pose, rng);
        if dropped {
            continue;
        }
        let message = V2VMessage {
            pose: claimed,
            ..msg.clone()
        };
        out.push(Delivery {
            receiver: *id,
            message,
            delay,
            arrival: msg.timestamp + delay + tx,
        });
    }
    out
}

/// Delivery queue ordered by arrival time, FIFO per (sender, receiver) pair.
#[derive(Debug, Default)]
pub struct Channel {
    queue: Vec<Delivery>,
    last_arrival: BTreeMap<(u32, u32), f64>,
}

impl Channel {
    pub fn new() -> Self {
        Self::default()
    }

    /// A delivery never overtakes an earlier one on the same link.
    pub fn push(&mut self, mut d: Delivery) {
        let key = (d.message.sender, d.receiver);
        if let Some(&last) = self.last_arrival.get(&key) {
            d.arrival = d.arrival.max(last);
        }
        self.last_arrival.insert(key, d.arrival);
        self.queue.push(d);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Removes and returns everything arrived by `t`, by arrival time with
    /// push order breaking ties.
    pub fn drain_until(&mut self, t: f64) -> Vec<Delivery> {
        let (mut ready, rest): (Vec<_>, Vec<_>) = self.queue.drain(..).enumerate().partition(|(_, d)| d.arrival <= t);
        self.queue = rest.into_iter().map(|(_, d)| d).collect();
        ready.sort_by(|a, b| a.1.arrival.total_cmp(&b.1.arrival).then(a.0.cmp(&b.0)));
        ready.into_iter().map(|(_, d)| d).collect()
    }
}

/// Length-prefixed concatenation of serialized messages.
pub fn write_dump(w: &mut impl Write, msgs: &[V2VMessage]) -> Result<()> {
    for m in msgs {
        let b = m.serialize();
        w.write_all(&(b.len() as u32).to_le_bytes())?;
        w.write_all(&b)?;
    }
    Ok(())
}

pub fn read_dump(r: &mut impl Read) -> Result<Vec<V2VMessage>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut out = Vec::new();
    let mut at = 0;
    while at < buf.len() {
        if buf.len() - at < 4 {
            return Err(ChannelError::Truncated {
                needed: 4,
                have: buf.len() - at,
            });
        }
        let n = u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        let end = at + n;
        if end > buf.len() {
            return Err(ChannelError::Truncated {
                needed: n,
                have: buf.len() - at,
            });
        }
        out.push(V2VMessage::parse(&buf[at..end])?);
        at = end;
    }
    Ok(out)
}
