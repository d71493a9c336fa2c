//! `type u8 | payload bit length u32 | payload | crc32 u32`, little endian.
//! The checksum covers every preceding byte of the frame.

use super::{Bitstream, CodecError, Result};

pub const FRAME_OVERHEAD: usize = 1 + 4 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PayloadType {
    Points = 0x01,
    Features = 0x02,
    Outputs = 0x03,
}

impl PayloadType {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0x01 => Ok(Self::Points),
            0x02 => Ok(Self::Features),
            0x03 => Ok(Self::Outputs),
            other => Err(CodecError::UnknownType(other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: PayloadType,
    pub payload: Bitstream,
}

impl Frame {
    pub fn new(kind: PayloadType, payload: Bitstream) -> Self {
        Self { kind, payload }
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.payload.bytes.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.payload.bit_len as u32).to_le_bytes());
        out.extend_from_slice(&self.payload.bytes);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses one frame from the front of `buf`, returning it and the bytes
    /// consumed.
    pub fn parse(buf: &[u8]) -> Result<(Frame, usize)> {
        if buf.len() < 5 {
            return Err(CodecError::Truncated {
                needed: FRAME_OVERHEAD,
                have: buf.len(),
            });
        }
        let bit_len = u32::from_le_bytes(buf[1..5].try_into().unwrap()) as u64;
        let n = bit_len.div_ceil(8) as usize;
        let total = FRAME_OVERHEAD + n;
        if buf.len() < total {
            return Err(CodecError::Truncated {
                needed: total,
                have: buf.len(),
            });
        }
        let stored = u32::from_le_bytes(buf[5 + n..total].try_into().unwrap());
        let computed = crc32fast::hash(&buf[..5 + n]);
        if stored != computed {
            return Err(CodecError::Checksum { stored, computed });
        }
        let kind = PayloadType::from_byte(buf[0])?;
        let payload = Bitstream {
            bytes: buf[5..5 + n].to_vec(),
            bit_len,
        };
        Ok((Frame { kind, payload }, total))
    }
}
