//! Run-length residual representation squeezed by DEFLATE.
//!
//! The residuals become `(zigzag value, run length)` pairs, each written as
//! two varints, and the byte string is compressed as a raw DEFLATE stream.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::{unzigzag, varint, zigzag, Backend, CodedBlock, CoderId, ResidualMap};
use crate::error::{corrupt, Result};

pub(crate) fn runs(deltas: &[i64]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for &d in deltas {
        let z = zigzag(d);
        match out.last_mut() {
            Some((v, n)) if *v == z => *n += 1,
            _ => out.push((z, 1)),
        }
    }
    out
}

pub fn encode_runlength(res: &ResidualMap) -> CodedBlock {
    let mut raw = Vec::new();
    for (value, run) in runs(res.deltas()) {
        varint::put(&mut raw, value);
        varint::put(&mut raw, run);
    }
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(&raw).expect("writing to a Vec cannot fail");
    let payload = enc.finish().expect("writing to a Vec cannot fail");
    CodedBlock {
        coder: CoderId::RunLengthDict,
        backend: Backend::Deflate,
        symbol_count: res.len() as u32,
        payload,
    }
}

pub fn decode_runlength(payload: &[u8], count: usize) -> Result<ResidualMap> {
    // Every pair covers at least one residual and takes at most 20 bytes.
    let limit = count as u64 * 20 + 1;
    let mut raw = Vec::new();
    DeflateDecoder::new(payload)
        .take(limit)
        .read_to_end(&mut raw)
        .map_err(|e| corrupt(format!("deflate: {e}")))?;
    if raw.len() as u64 >= limit {
        return Err(corrupt("run-length stream longer than its residual count allows"));
    }
    let mut deltas = Vec::with_capacity(count);
    let mut pos = 0;
    while pos < raw.len() {
        let value = varint::get(&raw, &mut pos)?;
        let run = varint::get(&raw, &mut pos)?;
        if run == 0 || run > (count - deltas.len()) as u64 {
            return Err(corrupt("run length out of range"));
        }
        let d = unzigzag(value);
        deltas.extend(std::iter::repeat_n(d, run as usize));
    }
    if deltas.len() != count {
        return Err(corrupt(format!(
            "run-length stream holds {} residuals, expected {count}",
            deltas.len()
        )));
    }
    ResidualMap::new(deltas).map_err(|e| corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_example() {
        assert_eq!(runs(&[0, 0, 0, 5, 5]), [(0, 3), (10, 2)]);
    }

    #[test]
    fn alternating_worst_case() {
        let deltas: Vec<i64> = (0..10_000).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect();
        assert_eq!(runs(&deltas).len(), 10_000);
        let res = ResidualMap::new(deltas).unwrap();
        let block = encode_runlength(&res);
        assert_eq!(decode_runlength(&block.payload, res.len()).unwrap(), res);
    }

    #[test]
    fn constant_map_is_tiny() {
        let res = ResidualMap::new(vec![4; 100_000]).unwrap();
        let block = encode_runlength(&res);
        assert!(block.payload.len() < 100, "{} bytes", block.payload.len());
        assert_eq!(decode_runlength(&block.payload, res.len()).unwrap(), res);
    }

    #[test]
    fn count_mismatch_is_corrupt() {
        let res = ResidualMap::new(vec![1, 1, 2]).unwrap();
        let block = encode_runlength(&res);
        assert!(decode_runlength(&block.payload, 2).is_err());
        assert!(decode_runlength(&block.payload, 4).is_err());
        assert!(decode_runlength(&[0xff, 0x00], 3).is_err());
    }
}
