//! Validity mask coding: alternating runs, arithmetic-coded.
//!
//! Payload: `first value u8 | varint run_count | arithmetic stream of run−1`.

use super::{arith_decode, arith_encode, varint};
use crate::error::{corrupt, Result};

pub(crate) fn mask_runs(valid: &[bool]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut iter = valid.iter();
    let Some(&first) = iter.next() else {
        return out;
    };
    let (mut cur, mut run) = (first, 1u64);
    for &v in iter {
        if v == cur {
            run += 1;
        } else {
            out.push(run);
            cur = v;
            run = 1;
        }
    }
    out.push(run);
    out
}

pub fn encode_mask(valid: &[bool]) -> Vec<u8> {
    let runs = mask_runs(valid);
    let symbols: Vec<u32> = runs.iter().map(|&r| (r - 1) as u32).collect();
    let mut out = vec![valid.first().copied().unwrap_or(false) as u8];
    varint::put(&mut out, runs.len() as u64);
    out.extend_from_slice(&arith_encode(&symbols));
    out
}

/// Decodes a mask of exactly `len` pixels.
pub fn decode_mask(bytes: &[u8], len: usize) -> Result<Vec<bool>> {
    let first = match bytes.first() {
        Some(0) => false,
        Some(1) => true,
        _ => return Err(corrupt("bad mask start value")),
    };
    let mut pos = 1;
    let count = varint::get(bytes, &mut pos)? as usize;
    if count > len || (count == 0) != (len == 0) {
        return Err(corrupt("mask run count inconsistent with its size"));
    }
    let symbols = arith_decode(&bytes[pos..], count)?;
    let mut out = Vec::with_capacity(len);
    let mut cur = first;
    for s in symbols {
        let run = s as usize + 1;
        if run > len - out.len() {
            return Err(corrupt("mask runs overflow the image"));
        }
        out.extend(std::iter::repeat_n(cur, run));
        cur = !cur;
    }
    if out.len() != len {
        return Err(corrupt("mask runs do not cover the image"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn all_valid_is_constant_size() {
        let a = encode_mask(&vec![true; 64 * 2650]);
        let b = encode_mask(&vec![true; 10]);
        assert!(a.len() <= 8 && b.len() <= 8);
        assert_eq!(decode_mask(&a, 64 * 2650).unwrap(), vec![true; 64 * 2650]);
    }

    #[test]
    fn alternating_and_empty() {
        let alt: Vec<bool> = (0..1001).map(|k| k % 2 == 1).collect();
        assert_eq!(decode_mask(&encode_mask(&alt), alt.len()).unwrap(), alt);
        assert_eq!(decode_mask(&encode_mask(&[]), 0).unwrap(), Vec::<bool>::new());
    }

    #[test]
    fn random_round_trip_and_wrong_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask: Vec<bool> = (0..5000).map(|_| rng.gen_bool(0.9)).collect();
        let bytes = encode_mask(&mask);
        assert_eq!(decode_mask(&bytes, 5000).unwrap(), mask);
        assert!(decode_mask(&bytes, 4999).is_err());
        assert!(decode_mask(&bytes, 5001).is_err());
    }
}
