//! Serialization and entropy coding of residual maps and validity masks.
//!
//! Two residual coders compete per block:
//!
//! * sparse: the nonzero count, gap-coded positions of the nonzeros and their
//!   zigzagged values, the two streams arithmetic-coded;
//! * run-length: `(zigzag value, run)` pairs as varints, squeezed by DEFLATE.
//!
//! `CodedBlock` wire layout, little-endian:
//! `coder_id u8 | backend_id u8 | symbol_count u32 | payload_len u32 | payload`.

pub mod arith;
mod mask;
mod runlength;
mod sparse;
pub mod varint;

use crate::error::{corrupt, Error, Result};

pub use arith::{arith_decode, arith_encode};
pub use mask::{decode_mask, encode_mask};
pub use runlength::{decode_runlength, encode_runlength};
pub use sparse::{decode_sparse, encode_sparse};

/// Bytes of a `CodedBlock` before its payload.
pub const BLOCK_HEADER_LEN: usize = 10;

#[inline]
pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

#[inline]
pub fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

/// Largest magnitude a residual may have; keeps zigzagged symbols in `u32`.
pub const MAX_DELTA: i64 = (1 << 31) - 1;

/// Integer prediction residuals of one block's valid pixels, in raster order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResidualMap {
    deltas: Vec<i64>,
}

impl ResidualMap {
    pub fn new(deltas: Vec<i64>) -> Result<Self> {
        if let Some(d) = deltas.iter().find(|d| d.abs() > MAX_DELTA) {
            return Err(Error::DimensionMismatch(format!(
                "residual {d} exceeds ±{MAX_DELTA}"
            )));
        }
        Ok(ResidualMap { deltas })
    }

    pub fn deltas(&self) -> &[i64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn into_deltas(self) -> Vec<i64> {
        self.deltas
    }

    pub fn zero_fraction(&self) -> f64 {
        if self.deltas.is_empty() {
            return 1.0;
        }
        self.deltas.iter().filter(|&&d| d == 0).count() as f64 / self.deltas.len() as f64
    }
}

/// Zigzagged residuals, the alphabet the coders see.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolStream {
    pub symbols: Vec<u32>,
}

impl SymbolStream {
    pub fn from_residuals(res: &ResidualMap) -> Self {
        SymbolStream {
            symbols: res.deltas.iter().map(|&d| zigzag(d) as u32).collect(),
        }
    }

    pub fn to_residuals(&self) -> ResidualMap {
        ResidualMap {
            deltas: self.symbols.iter().map(|&s| unzigzag(s as u64)).collect(),
        }
    }

    /// One more than the largest symbol.
    pub fn alphabet_size(&self) -> u64 {
        self.symbols.iter().max().map_or(0, |&m| m as u64 + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CoderId {
    SparseArithmetic = 0,
    RunLengthDict = 1,
}

impl TryFrom<u8> for CoderId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(CoderId::SparseArithmetic),
            1 => Ok(CoderId::RunLengthDict),
            _ => Err(corrupt(format!("unknown coder id {v}"))),
        }
    }
}

/// Secondary compressor applied to a coder's serialized output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Backend {
    None = 0,
    /// Raw DEFLATE stream (RFC 1951).
    Deflate = 1,
    /// Reserved for LZMA-format payloads; recognized but not decoded here.
    Lzma = 2,
}

impl TryFrom<u8> for Backend {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Backend::None),
            1 => Ok(Backend::Deflate),
            2 => Ok(Backend::Lzma),
            _ => Err(corrupt(format!("unknown backend id {v}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedBlock {
    pub coder: CoderId,
    pub backend: Backend,
    /// Number of residuals the payload decodes to.
    pub symbol_count: u32,
    pub payload: Vec<u8>,
}

impl CodedBlock {
    pub fn encoded_len(&self) -> usize {
        BLOCK_HEADER_LEN + self.payload.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.coder as u8);
        out.push(self.backend as u8);
        out.extend_from_slice(&self.symbol_count.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    /// Parses one block from the front of `bytes`, returning it and the
    /// number of bytes it occupied.
    pub fn read_from(bytes: &[u8]) -> Result<(CodedBlock, usize)> {
        if bytes.len() < BLOCK_HEADER_LEN {
            return Err(corrupt("truncated coded block header"));
        }
        let coder = CoderId::try_from(bytes[0])?;
        let backend = Backend::try_from(bytes[1])?;
        let symbol_count = u32::from_le_bytes(bytes[2..6].try_into().unwrap());
        let len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let end = BLOCK_HEADER_LEN
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("coded block payload runs past the end"))?;
        Ok((
            CodedBlock {
                coder,
                backend,
                symbol_count,
                payload: bytes[BLOCK_HEADER_LEN..end].to_vec(),
            },
            end,
        ))
    }

    pub fn decode(&self) -> Result<ResidualMap> {
        let res = match self.coder {
            CoderId::SparseArithmetic => {
                if self.backend != Backend::None {
                    return Err(corrupt("sparse coder with a dictionary backend"));
                }
                decode_sparse(&self.payload, self.symbol_count as usize)?
            }
            CoderId::RunLengthDict => match self.backend {
                Backend::Deflate => decode_runlength(&self.payload, self.symbol_count as usize)?,
                Backend::Lzma => {
                    return Err(Error::Unsupported("LZMA backend payloads".into()));
                }
                Backend::None => return Err(corrupt("run-length coder without backend")),
            },
        };
        Ok(res)
    }
}

/// Codes `res` with both coders and keeps the smaller; ties go to sparse.
pub fn choose_coder(res: &ResidualMap) -> CodedBlock {
    let sparse = encode_sparse(res);
    let rle = encode_runlength(res);
    if rle.payload.len() < sparse.payload.len() {
        rle
    } else {
        sparse
    }
}
