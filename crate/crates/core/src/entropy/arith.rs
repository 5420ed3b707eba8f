//! Adaptive order-0 binary arithmetic coder with 32-bit integer state.
//!
//! The model has 256 slots: symbols `0..=254` are coded directly and slot 255
//! is an escape, after which the symbol itself follows as two equiprobable
//! 16-bit halves. Counts start at 1, grow by [`INCREMENT`] per coded slot and
//! are halved (rounding up) whenever their total exceeds [`MAX_TOTAL`].

use crate::error::{corrupt, Result};

pub const SLOTS: usize = 256;
pub const ESCAPE: u32 = 255;
pub const INCREMENT: u32 = 32;
pub const MAX_TOTAL: u32 = 1 << 16;

const TOP: u64 = (1 << 32) - 1;
const HALF: u64 = 1 << 31;
const FIRST_QUARTER: u64 = 1 << 30;
const THIRD_QUARTER: u64 = 3 << 30;

/// Bits the decoder may pull past the end of a well-formed payload.
const LOOKAHEAD_SLACK: u64 = 32;

#[derive(Clone, Debug)]
struct AdaptiveModel {
    counts: [u32; SLOTS],
    total: u32,
}

impl AdaptiveModel {
    fn new() -> Self {
        AdaptiveModel {
            counts: [1; SLOTS],
            total: SLOTS as u32,
        }
    }

    fn range_of(&self, slot: usize) -> (u32, u32) {
        let lo: u32 = self.counts[..slot].iter().sum();
        (lo, lo + self.counts[slot])
    }

    /// Slot whose cumulative interval contains `target`, with that interval.
    fn find(&self, target: u32) -> Option<(usize, u32, u32)> {
        let mut lo = 0;
        for (slot, &c) in self.counts.iter().enumerate() {
            if target < lo + c {
                return Some((slot, lo, lo + c));
            }
            lo += c;
        }
        None
    }

    fn update(&mut self, slot: usize) {
        self.counts[slot] += INCREMENT;
        self.total += INCREMENT;
        if self.total > MAX_TOTAL {
            self.total = 0;
            for c in self.counts.iter_mut() {
                *c = c.div_ceil(2);
                self.total += *c;
            }
        }
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    nbits: u8,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter {
            bytes: Vec::new(),
            acc: 0,
            nbits: 0,
        }
    }

    fn put(&mut self, bit: bool) {
        self.acc = (self.acc << 1) | bit as u8;
        self.nbits += 1;
        if self.nbits == 8 {
            self.bytes.push(self.acc);
            self.acc = 0;
            self.nbits = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.bytes.push(self.acc << (8 - self.nbits));
        }
        self.bytes
    }
}

/// Streaming encoder; symbols are pushed one at a time.
pub struct ArithEncoder {
    model: AdaptiveModel,
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Default for ArithEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithEncoder {
    pub fn new() -> Self {
        ArithEncoder {
            model: AdaptiveModel::new(),
            low: 0,
            high: TOP,
            pending: 0,
            out: BitWriter::new(),
        }
    }

    pub fn push(&mut self, symbol: u32) {
        if symbol < ESCAPE {
            self.push_slot(symbol as usize);
        } else {
            self.push_slot(ESCAPE as usize);
            self.encode_interval(symbol >> 16, (symbol >> 16) + 1, 1 << 16);
            self.encode_interval(symbol & 0xffff, (symbol & 0xffff) + 1, 1 << 16);
        }
    }

    fn push_slot(&mut self, slot: usize) {
        let (lo, hi) = self.model.range_of(slot);
        self.encode_interval(lo, hi, self.model.total);
        self.model.update(slot);
    }

    fn encode_interval(&mut self, cum_lo: u32, cum_hi: u32, total: u32) {
        let range = self.high - self.low + 1;
        self.high = self.low + range * cum_hi as u64 / total as u64 - 1;
        self.low += range * cum_lo as u64 / total as u64;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= FIRST_QUARTER && self.high < THIRD_QUARTER {
                self.pending += 1;
                self.low -= FIRST_QUARTER;
                self.high -= FIRST_QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.put(bit);
        for _ in 0..self.pending {
            self.out.put(!bit);
        }
        self.pending = 0;
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.pending += 1;
        let bit = self.low >= FIRST_QUARTER;
        self.emit(bit);
        self.out.finish()
    }
}

/// Streaming decoder over a byte slice. Reads past the end see zero bits;
/// the decoder tracks how many it took so inconsistent streams are caught.
pub struct ArithDecoder<'a> {
    model: AdaptiveModel,
    bytes: &'a [u8],
    bit_pos: u64,
    low: u64,
    high: u64,
    value: u64,
}

impl<'a> ArithDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = ArithDecoder {
            model: AdaptiveModel::new(),
            bytes,
            bit_pos: 0,
            low: 0,
            high: TOP,
            value: 0,
        };
        for _ in 0..32 {
            d.value = (d.value << 1) | d.next_bit();
        }
        d
    }

    fn next_bit(&mut self) -> u64 {
        let byte = (self.bit_pos / 8) as usize;
        let bit = match self.bytes.get(byte) {
            Some(b) => (b >> (7 - self.bit_pos % 8)) & 1,
            None => 0,
        };
        self.bit_pos += 1;
        bit as u64
    }

    fn overrun(&self) -> u64 {
        self.bit_pos.saturating_sub(self.bytes.len() as u64 * 8)
    }

    pub fn next(&mut self) -> Result<u32> {
        let (slot, lo, hi) = {
            let target = self.target(self.model.total);
            self.model
                .find(target)
                .ok_or_else(|| corrupt("arithmetic code value outside model range"))?
        };
        self.consume(lo, hi, self.model.total);
        self.model.update(slot);
        let symbol = if slot as u32 == ESCAPE {
            let hi16 = self.raw16();
            let lo16 = self.raw16();
            let s = (hi16 << 16) | lo16;
            if s < ESCAPE {
                return Err(corrupt("escaped symbol below the escape threshold"));
            }
            s
        } else {
            slot as u32
        };
        if self.overrun() > 2 * LOOKAHEAD_SLACK {
            return Err(corrupt("arithmetic decoder ran past the payload"));
        }
        Ok(symbol)
    }

    fn raw16(&mut self) -> u32 {
        let v = self.target(1 << 16);
        self.consume(v, v + 1, 1 << 16);
        v
    }

    fn target(&self, total: u32) -> u32 {
        let range = self.high - self.low + 1;
        (((self.value - self.low + 1) * total as u64 - 1) / range) as u32
    }

    fn consume(&mut self, cum_lo: u32, cum_hi: u32, total: u32) {
        let range = self.high - self.low + 1;
        self.high = self.low + range * cum_hi as u64 / total as u64 - 1;
        self.low += range * cum_lo as u64 / total as u64;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.value -= HALF;
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= FIRST_QUARTER && self.high < THIRD_QUARTER {
                self.value -= FIRST_QUARTER;
                self.low -= FIRST_QUARTER;
                self.high -= FIRST_QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit();
        }
    }

    /// Checks that the stream ended where a well-formed encoder would have.
    pub fn finish(self) -> Result<()> {
        if self.overrun() > LOOKAHEAD_SLACK {
            return Err(corrupt("arithmetic stream terminated inconsistently"));
        }
        let unread = (self.bytes.len() as u64 * 8).saturating_sub(self.bit_pos);
        if unread >= 8 {
            return Err(corrupt("trailing bytes after arithmetic stream"));
        }
        Ok(())
    }
}

/// Codes `symbols` with a fresh adaptive model.
pub fn arith_encode(symbols: &[u32]) -> Vec<u8> {
    let mut enc = ArithEncoder::new();
    for &s in symbols {
        enc.push(s);
    }
    enc.finish()
}

/// Decodes exactly `count` symbols; the payload must end with them.
pub fn arith_decode(payload: &[u8], count: usize) -> Result<Vec<u32>> {
    let mut dec = ArithDecoder::new(payload);
    let mut out = Vec::with_capacity(count.min(payload.len().saturating_mul(8) + 64));
    for _ in 0..count {
        out.push(dec.next()?);
    }
    dec.finish()?;
    Ok(out)
}
