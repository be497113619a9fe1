//! Non-adaptive binary arithmetic coder with 32-bit registers.
//!
//! Probabilities are 16-bit integers `p1 ∈ [1, 65535]` giving `P(bit = 1)` in
//! units of 1/65536. Carries are resolved by counting pending bits, and bits
//! are packed most significant first.

use crate::error::{Error, Result};

const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
const TOP: u64 = (1 << 32) - 1;

/// Number of zero bits the decoder may read past the end of its input.
const ZERO_FILL: u64 = 32;

/// Clamps any probability to the representable range.
pub fn clamp_probability(p1: u32) -> u16 {
    p1.clamp(1, 65535) as u16
}

fn split(low: u64, high: u64, p1: u16) -> u64 {
    let range = high - low + 1;
    let p0 = 65536 - u64::from(p1.max(1));
    low + ((range * p0) >> 16) - 1
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    current: u8,
    filled: u8,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        self.current = (self.current << 1) | bit as u8;
        self.filled += 1;
        if self.filled == 8 {
            self.bytes.push(self.current);
            self.current = 0;
            self.filled = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push(self.current << (8 - self.filled));
        }
        self.bytes
    }
}

pub struct Encoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            high: TOP,
            pending: 0,
            out: BitWriter::default(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    pub fn encode_bit(&mut self, bit: bool, p1: u16) {
        let mid = split(self.low, self.high, p1);
        if bit {
            self.low = mid + 1;
        } else {
            self.high = mid;
        }
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    /// Flushes enough bits to identify the final interval.
    pub fn finish(mut self) -> Vec<u8> {
        self.pending += 1;
        let bit = self.low >= QUARTER;
        self.emit(bit);
        self.out.finish()
    }
}

pub struct Decoder<'a> {
    data: &'a [u8],
    position: u64,
    low: u64,
    high: u64,
    value: u64,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            data,
            position: 0,
            low: 0,
            high: TOP,
            value: 0,
        };
        for _ in 0..32 {
            d.value = (d.value << 1) | d.next_bit()?;
        }
        Ok(d)
    }

    fn next_bit(&mut self) -> Result<u64> {
        let i = self.position;
        self.position += 1;
        let byte = (i / 8) as usize;
        match self.data.get(byte) {
            Some(b) => Ok(u64::from((b >> (7 - i % 8)) & 1)),
            None if i < self.data.len() as u64 * 8 + ZERO_FILL => Ok(0),
            None => Err(Error::CorruptStream(format!(
                "read past the end of a {}-byte stream",
                self.data.len()
            ))),
        }
    }

    pub fn decode_bit(&mut self, p1: u16) -> Result<bool> {
        let mid = split(self.low, self.high, p1);
        let bit = self.value > mid;
        if bit {
            self.low = mid + 1;
        } else {
            self.high = mid;
        }
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit()?;
        }
        if self.value < self.low || self.value > self.high {
            return Err(Error::CorruptStream("code value left the coding interval".into()));
        }
        Ok(bit)
    }
}
