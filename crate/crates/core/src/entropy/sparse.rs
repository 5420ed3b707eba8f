//! Sparse residual representation: positions and values of the nonzeros.
//!
//! Payload: `varint nnz | varint gap_stream_len | gap stream | value stream`.
//! Gaps are the first nonzero's index followed by successive index
//! differences; values are zigzagged. Both streams are arithmetic-coded.

use super::{arith_decode, arith_encode, varint, zigzag, unzigzag, Backend, CodedBlock, CoderId, ResidualMap};
use crate::error::{corrupt, Result};

/// Gap-coded indices and the nonzero values of `deltas`.
pub(crate) fn split(deltas: &[i64]) -> (Vec<u32>, Vec<u32>) {
    let mut gaps = Vec::new();
    let mut values = Vec::new();
    let mut prev = 0usize;
    for (k, &d) in deltas.iter().enumerate().filter(|(_, &d)| d != 0) {
        gaps.push((k - prev) as u32);
        values.push(zigzag(d) as u32);
        prev = k;
    }
    (gaps, values)
}

pub fn encode_sparse(res: &ResidualMap) -> CodedBlock {
    let (gaps, values) = split(res.deltas());
    let gap_bytes = arith_encode(&gaps);
    let value_bytes = arith_encode(&values);
    let mut payload = Vec::with_capacity(gap_bytes.len() + value_bytes.len() + 8);
    varint::put(&mut payload, gaps.len() as u64);
    varint::put(&mut payload, gap_bytes.len() as u64);
    payload.extend_from_slice(&gap_bytes);
    payload.extend_from_slice(&value_bytes);
    CodedBlock {
        coder: CoderId::SparseArithmetic,
        backend: Backend::None,
        symbol_count: res.len() as u32,
        payload,
    }
}

pub fn decode_sparse(payload: &[u8], count: usize) -> Result<ResidualMap> {
    let mut pos = 0;
    let nnz = varint::get(payload, &mut pos)? as usize;
    let gap_len = varint::get(payload, &mut pos)? as usize;
    if nnz > count {
        return Err(corrupt("more nonzeros than residuals"));
    }
    let gap_end = pos
        .checked_add(gap_len)
        .filter(|&e| e <= payload.len())
        .ok_or_else(|| corrupt("sparse gap stream runs past the payload"))?;
    let gaps = arith_decode(&payload[pos..gap_end], nnz)?;
    let values = arith_decode(&payload[gap_end..], nnz)?;
    let mut deltas = vec![0i64; count];
    let mut idx = 0usize;
    for (k, (&gap, &value)) in gaps.iter().zip(&values).enumerate() {
        if k > 0 && gap == 0 {
            return Err(corrupt("repeated sparse index"));
        }
        idx = idx
            .checked_add(gap as usize)
            .filter(|&i| i < count)
            .ok_or_else(|| corrupt("sparse index beyond residual count"))?;
        if value == 0 {
            return Err(corrupt("explicit zero in sparse values"));
        }
        deltas[idx] = unzigzag(value as u64);
    }
    ResidualMap::new(deltas)
}
