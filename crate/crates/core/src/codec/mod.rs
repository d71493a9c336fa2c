//! Payload codecs: range coder, learned feature codec, point codec, output
//! codec, and the checksummed payload frame.

pub mod feature;
mod frame;
pub mod outputs;
pub mod points;
mod range;

use thiserror::Error;

pub use feature::{feat_decode, feat_encode, rd_loss, table_nll, FeatureCodecConfig, RdParts, SymbolModel};
pub use frame::{Frame, PayloadType, FRAME_OVERHEAD};
pub use range::{
    range_decode, range_encode, AdaptiveModel, FreqTable, RangeDecoder, RangeEncoder, MAX_TOTAL,
};

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("symbol {symbol} outside alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: i64, alphabet: usize },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated payload: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown payload type {0:#04x}")]
    UnknownType(u8),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// Bytes plus the exact number of meaningful bits; bits past `bit_len` in
/// the last byte are zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bitstream {
    pub bytes: Vec<u8>,
    pub bit_len: u64,
}

impl Bitstream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let bit_len = bytes.len() as u64 * 8;
        Self { bytes, bit_len }
    }
}
