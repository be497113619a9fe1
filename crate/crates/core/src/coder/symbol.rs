//! Integer symbols coded as bit planes under a model PMF.
//!
//! A value is clamped into a power-of-two range `[lo, lo + 2^n)` and written
//! as `n` offset-binary decisions, most significant first. Each decision is
//! coded with the model's conditional mass of the upper half of the current
//! sub-range. The tail mass outside the range is attributed to the end
//! values, which is where clamped outliers land.

use crate::coder::arith::{clamp_probability, Decoder, Encoder};
use crate::density::IntervalMass;
use crate::error::{Error, Result};

/// Tail mass allowed on each side of a [`SymbolRange`].
pub const TAIL_MASS: f64 = 1.0 / 2_097_152.0;

/// Widest supported range, in bits.
pub const MAX_BITS: u32 = 30;

/// Admissible values `[lo, lo + 2^n_bits)` for one element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolRange {
    pub lo: i64,
    pub n_bits: u32,
}

impl SymbolRange {
    pub fn hi(&self) -> i64 {
        self.lo + (1i64 << self.n_bits) - 1
    }

    pub fn clamp(&self, value: i64) -> i64 {
        value.clamp(self.lo, self.hi())
    }

    /// Mass of `[a, b]`, with everything below `lo` and above `hi` folded
    /// into the end values.
    fn mass<P: IntervalMass + ?Sized>(&self, pmf: &P, a: i64, b: i64) -> f64 {
        let left = if a <= self.lo { f64::NEG_INFINITY } else { a as f64 - 0.5 };
        let right = if b >= self.hi() { f64::INFINITY } else { b as f64 + 0.5 };
        pmf.mass(left, right)
    }

    /// Quantized probability that the decision for plane `bit` is 1, given
    /// that the offset so far is `prefix` (higher bits already fixed).
    fn bit_probability<P: IntervalMass + ?Sized>(&self, pmf: &P, prefix: i64, bit: u32) -> u16 {
        let start = self.lo + prefix;
        let half = 1i64 << bit;
        let whole = self.mass(pmf, start, start + 2 * half - 1);
        let upper = self.mass(pmf, start + half, start + 2 * half - 1);
        if !(whole > 0.0) || !upper.is_finite() {
            return 32768;
        }
        let p = (upper / whole * 65536.0).round();
        clamp_probability(p.clamp(0.0, 65536.0) as u32)
    }
}

/// Smallest integer `n` with `P(Y < n + ½) ≥ target`, searched in `[lo, hi]`.
fn lower_quantile<P: IntervalMass + ?Sized>(pmf: &P, target: f64, mut lo: i64, mut hi: i64) -> i64 {
    while lo < hi {
        let mid = lo + (hi - lo).div_euclid(2);
        if pmf.mass(f64::NEG_INFINITY, mid as f64 + 0.5) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Largest integer `n` with `P(Y > n − ½) ≥ target`, searched in `[lo, hi]`.
fn upper_quantile<P: IntervalMass + ?Sized>(pmf: &P, target: f64, mut lo: i64, mut hi: i64) -> i64 {
    while lo < hi {
        let mid = lo + (hi - lo + 1).div_euclid(2);
        if pmf.mass(mid as f64 - 0.5, f64::INFINITY) >= target {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Range leaving less than [`TAIL_MASS`] on each side, widened symmetrically
/// to a power-of-two number of values.
pub fn derive_range<P: IntervalMass + ?Sized>(pmf: &P) -> SymbolRange {
    let limit = 1i64 << (MAX_BITS - 1);
    let lo = lower_quantile(pmf, TAIL_MASS, -limit, limit);
    let hi = upper_quantile(pmf, TAIL_MASS, -limit, limit).max(lo);
    let count = (hi - lo + 1) as u64;
    let n_bits = (64 - (count - 1).leading_zeros()).min(MAX_BITS);
    let extra = (1i64 << n_bits) - (hi - lo + 1);
    SymbolRange {
        lo: lo - extra.max(0) / 2,
        n_bits,
    }
}

/// Writes `value` (clamped into `range`) as `range.n_bits` decisions.
pub fn encode_symbol<P: IntervalMass + ?Sized>(
    enc: &mut Encoder,
    value: i64,
    pmf: &P,
    range: SymbolRange,
) {
    let offset = range.clamp(value) - range.lo;
    let mut prefix = 0;
    for bit in (0..range.n_bits).rev() {
        let p1 = range.bit_probability(pmf, prefix, bit);
        let b = (offset >> bit) & 1 == 1;
        enc.encode_bit(b, p1);
        if b {
            prefix += 1 << bit;
        }
    }
}

/// Inverse of [`encode_symbol`].
pub fn decode_symbol<P: IntervalMass + ?Sized>(
    dec: &mut Decoder<'_>,
    pmf: &P,
    range: SymbolRange,
) -> Result<i64> {
    let mut prefix = 0;
    for bit in (0..range.n_bits).rev() {
        let p1 = range.bit_probability(pmf, prefix, bit);
        if dec.decode_bit(p1)? {
            prefix += 1 << bit;
        }
    }
    let value = range.lo + prefix;
    if value > range.hi() {
        return Err(Error::CorruptStream("decoded value outside its range".into()));
    }
    Ok(value)
}
