//! Saturating signed fixed-point arithmetic and the xorshift32 generator
//! that drives stochastic rounding.
//!
//! Every quantity in the datapath is a two's-complement integer with an
//! implied binary point. [`QValue`] carries the format alongside the raw
//! integer for the public API; the hot loops in the engine work on raw
//! integers through the `*_raw` helpers, which implement the exact same
//! arithmetic.
//!
//! Rounding mode: every rescale truncates toward negative infinity
//! (arithmetic shift right) and then saturates to the destination range.

use std::fmt;

use crate::error::FixedPointError;

/// Signed fixed-point format `Q(total_bits, frac_bits)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    total_bits: u8,
    frac_bits: u8,
}

impl QFormat {
    /// 8-bit synaptic weight with 7 fractional bits.
    pub const Q8_7: QFormat = QFormat::const_new(8, 7);
    /// Membrane potential and readout accumulator.
    pub const MEMBRANE: QFormat = QFormat::const_new(16, 8);
    /// Eligibility trace storage.
    pub const TRACE: QFormat = QFormat::const_new(16, 12);
    /// Weight-update accumulator (units of one weight LSB).
    pub const UPDATE: QFormat = QFormat::const_new(24, 16);
    /// Learning-signal register.
    pub const LEARNING_SIGNAL: QFormat = QFormat::const_new(24, 8);
    /// Integer weight grid.
    pub const WEIGHT_INT: QFormat = QFormat::const_new(8, 0);

    const fn const_new(total_bits: u8, frac_bits: u8) -> Self {
        assert!(
            matches!(total_bits, 8 | 16 | 24 | 32),
            "unsupported total width"
        );
        assert!(frac_bits < total_bits, "frac_bits must be < total_bits");
        QFormat {
            total_bits,
            frac_bits,
        }
    }

    pub fn new(total_bits: u8, frac_bits: u8) -> Result<Self, FixedPointError> {
        if !matches!(total_bits, 8 | 16 | 24 | 32) || frac_bits >= total_bits {
            return Err(FixedPointError::InvalidFormat {
                total_bits,
                frac_bits,
            });
        }
        Ok(QFormat {
            total_bits,
            frac_bits,
        })
    }

    pub const fn total_bits(self) -> u8 {
        self.total_bits
    }

    pub const fn frac_bits(self) -> u8 {
        self.frac_bits
    }

    pub fn min_raw(self) -> i32 {
        min_raw(self.total_bits)
    }

    pub fn max_raw(self) -> i32 {
        max_raw(self.total_bits)
    }

    /// Value of one LSB.
    pub fn resolution(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q{}.{}",
            self.total_bits - self.frac_bits - 1,
            self.frac_bits
        )
    }
}

#[inline]
pub const fn min_raw(total_bits: u8) -> i32 {
    (-(1i64 << (total_bits - 1))) as i32
}

#[inline]
pub const fn max_raw(total_bits: u8) -> i32 {
    ((1i64 << (total_bits - 1)) - 1) as i32
}

/// Clamp a wide intermediate into a `total_bits` two's-complement range.
#[inline]
pub fn saturate_raw(raw: i64, total_bits: u8) -> i32 {
    raw.clamp(min_raw(total_bits) as i64, max_raw(total_bits) as i64) as i32
}

/// Move a raw value between binary points. Narrowing truncates toward −∞.
#[inline]
pub fn rescale_raw(raw: i64, from_frac: u8, to_frac: u8) -> i64 {
    if to_frac >= from_frac {
        raw << (to_frac - from_frac)
    } else {
        raw >> (from_frac - to_frac)
    }
}

/// Saturating addition on raw values of the same width.
#[inline]
pub fn add_sat_raw(a: i32, b: i32, total_bits: u8) -> i32 {
    saturate_raw(a as i64 + b as i64, total_bits)
}

/// A fixed-point scalar: raw two's-complement integer plus its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QValue {
    raw: i32,
    format: QFormat,
}

impl QValue {
    pub fn from_raw(raw: i32, format: QFormat) -> Result<Self, FixedPointError> {
        if raw < format.min_raw() || raw > format.max_raw() {
            return Err(FixedPointError::OutOfRange { raw, format });
        }
        Ok(QValue { raw, format })
    }

    /// Saturating constructor from any wide raw integer.
    pub fn saturating_from_raw(raw: i64, format: QFormat) -> Self {
        QValue {
            raw: saturate_raw(raw, format.total_bits),
            format,
        }
    }

    /// Nearest-below grid point of `x`, saturated.
    pub fn from_f64(x: f64, format: QFormat) -> Self {
        let scaled = (x * (format.frac_bits as f64).exp2()).floor();
        let raw = if scaled.is_nan() {
            0
        } else {
            scaled.clamp(i64::MIN as f64, i64::MAX as f64) as i64
        };
        Self::saturating_from_raw(raw, format)
    }

    pub fn zero(format: QFormat) -> Self {
        QValue { raw: 0, format }
    }

    pub fn raw(self) -> i32 {
        self.raw
    }

    pub fn format(self) -> QFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.format.resolution()
    }

    /// Re-express in another format (truncate toward −∞, then saturate).
    pub fn convert(self, to: QFormat) -> Self {
        let r = rescale_raw(self.raw as i64, self.format.frac_bits, to.frac_bits);
        Self::saturating_from_raw(r, to)
    }
}

impl fmt::Display for QValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.format, self.to_f64())
    }
}

/// Saturating addition. Both operands must share a format.
pub fn q_add_sat(a: QValue, b: QValue) -> Result<QValue, FixedPointError> {
    if a.format != b.format {
        return Err(FixedPointError::FormatMismatch {
            left: a.format,
            right: b.format,
        });
    }
    Ok(QValue {
        raw: add_sat_raw(a.raw, b.raw, a.format.total_bits),
        format: a.format,
    })
}

/// Full-precision product rescaled into `out` (floor, then saturate).
pub fn q_mul(a: QValue, b: QValue, out: QFormat) -> QValue {
    let wide = a.raw as i64 * b.raw as i64;
    let frac = a.format.frac_bits + b.format.frac_bits;
    QValue::saturating_from_raw(rescale_raw(wide, frac, out.frac_bits), out)
}

/// Round `wide` onto the grid of `target`, going up with probability equal
/// to the discarded fraction. The fraction bits are compared against a
/// uniform draw of the same width, so the expectation is exact.
pub fn stochastic_round(
    wide: QValue,
    target: QFormat,
    prng: &mut Prng,
) -> Result<QValue, FixedPointError> {
    let from = wide.format.frac_bits;
    let to = target.frac_bits;
    if from <= to {
        return Err(FixedPointError::NotNarrowing { from, to });
    }
    let raw = stochastic_round_raw(wide.raw as i64, from - to, prng);
    Ok(QValue::saturating_from_raw(raw, target))
}

/// Raw form of [`stochastic_round`]: drop `shift` fractional bits.
///
/// No PRNG draw is consumed when the discarded fraction is zero.
#[inline]
pub fn stochastic_round_raw(raw: i64, shift: u8, prng: &mut Prng) -> i64 {
    debug_assert!(shift > 0 && shift <= 32);
    let mask = (1i64 << shift) - 1;
    let frac = raw & mask;
    let floor = raw >> shift;
    if frac == 0 {
        return floor;
    }
    let draw = (prng.next_u32() as u64 >> (32 - shift as u32)) as i64;
    if draw < frac {
        floor + 1
    } else {
        floor
    }
}

/// xorshift32 generator (shifts 13, 17, 5). State is never zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prng {
    state: u32,
    seed: u32,
}

/// Substitute state for a zero seed.
const ZERO_SEED_STATE: u32 = 0x9E37_79B9;

impl Prng {
    pub fn new(seed: u32) -> Self {
        let state = if seed == 0 { ZERO_SEED_STATE } else { seed };
        Prng { state, seed }
    }

    /// Independent stream for `(master, a, b)`, e.g. (run seed, step, row).
    pub fn derive(master: u64, a: u64, b: u64) -> Self {
        Prng::new(derive_seed(master, a, b) as u32)
    }

    pub fn seed(&self) -> u32 {
        self.seed
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        let mut x = self.state;
        x ^= x << 13;
        x ^= x >> 17;
        x ^= x << 5;
        self.state = x;
        x
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn uniform_int(&mut self, lo: i32, hi: i32) -> i32 {
        debug_assert!(lo <= hi);
        let span = (hi as i64 - lo as i64 + 1) as u64;
        // Multiply-shift mapping; bias is below 2^-32 * span.
        let r = (self.next_u32() as u64 * span) >> 32;
        (lo as i64 + r as i64) as i32
    }

    /// Bernoulli draw with probability `p`, resolved to 2^-32.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        let threshold = (p * 4_294_967_296.0) as u64;
        (self.next_u32() as u64) < threshold
    }
}

/// `prng_next` as a free function over an owned generator.
pub fn prng_next(mut prng: Prng) -> (u32, Prng) {
    let word = prng.next_u32();
    (word, prng)
}

/// splitmix64 finalizer chain over three words.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ a) ^ b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(x: f64, f: QFormat) -> QValue {
        QValue::from_f64(x, f)
    }

    #[test]
    fn add_identity_and_saturation() {
        let z = QValue::zero(QFormat::Q8_7);
        assert_eq!(q_add_sat(z, z).unwrap().raw(), 0);

        let a = QValue::from_raw(127, QFormat::Q8_7).unwrap();
        let b = QValue::from_raw(1, QFormat::Q8_7).unwrap();
        assert_eq!(q_add_sat(a, b).unwrap().raw(), 127);
        let n = QValue::from_raw(-128, QFormat::Q8_7).unwrap();
        assert_eq!(q_add_sat(n, n).unwrap().raw(), -128);
    }

    #[test]
    fn add_exact_q8_8() {
        let f = QFormat::MEMBRANE;
        let r = q_add_sat(q(1.5, f), q(-2.25, f)).unwrap();
        assert_eq!(r.to_f64(), -0.75);
    }

    #[test]
    fn add_format_mismatch_is_error() {
        let r = q_add_sat(QValue::zero(QFormat::Q8_7), QValue::zero(QFormat::MEMBRANE));
        assert!(matches!(r, Err(FixedPointError::FormatMismatch { .. })));
    }

    #[test]
    fn mul_cases() {
        let f = QFormat::Q8_7;
        assert_eq!(q_mul(QValue::zero(f), q(0.75, f), f).raw(), 0);
        assert_eq!(q_mul(q(0.5, f), q(0.5, f), f).to_f64(), 0.25);
        let m1 = QValue::from_raw(-128, f).unwrap();
        assert_eq!(q_mul(m1, m1, f).raw(), 127);
    }

    #[test]
    fn mul_truncates_toward_neg_infinity() {
        let f = QFormat::Q8_7;
        // -1/128 * 0.5 = -1/256 -> floor on the 1/128 grid is -1/128
        let a = QValue::from_raw(-1, f).unwrap();
        assert_eq!(q_mul(a, q(0.5, f), f).raw(), -1);
        let b = QValue::from_raw(1, f).unwrap();
        assert_eq!(q_mul(b, q(0.5, f), f).raw(), 0);
    }

    #[test]
    fn format_validation() {
        assert!(QFormat::new(12, 4).is_err());
        assert!(QFormat::new(8, 8).is_err());
        assert!(QFormat::new(32, 31).is_ok());
        assert_eq!(QFormat::MEMBRANE.to_string(), "Q7.8");
    }

    #[test]
    fn from_raw_rejects_out_of_range() {
        assert!(QValue::from_raw(128, QFormat::Q8_7).is_err());
        assert!(QValue::from_raw(-129, QFormat::Q8_7).is_err());
    }

    #[test]
    fn xorshift_golden_value() {
        // 1 ^ 1<<13 = 8193; >>17 leaves it; 8193 ^ 8193<<5 = 270369
        let (w, _) = prng_next(Prng::new(1));
        assert_eq!(w, 270_369);
    }

    #[test]
    fn xorshift_deterministic_and_nonzero() {
        let mut a = Prng::new(12345);
        let mut b = Prng::new(12345);
        for _ in 0..1_000_000 {
            let x = a.next_u32();
            assert_eq!(x, b.next_u32());
            assert_ne!(x, 0);
        }
        assert_ne!(Prng::new(0).state(), 0);
    }

    #[test]
    fn stochastic_round_exact_values_untouched() {
        let wide = q(3.0, QFormat::UPDATE);
        for seed in 1..200 {
            let mut p = Prng::new(seed);
            let r = stochastic_round(wide, QFormat::WEIGHT_INT, &mut p).unwrap();
            assert_eq!(r.raw(), 3);
        }
    }

    #[test]
    fn stochastic_round_requires_narrowing() {
        let mut p = Prng::new(1);
        let r = stochastic_round(QValue::zero(QFormat::Q8_7), QFormat::MEMBRANE, &mut p);
        assert!(r.is_err());
    }

    fn empirical_mean(x: f64, seed: u32, n: usize) -> f64 {
        let wide = q(x, QFormat::UPDATE);
        let mut p = Prng::new(seed);
        let mut sum = 0i64;
        for _ in 0..n {
            sum += stochastic_round(wide, QFormat::WEIGHT_INT, &mut p)
                .unwrap()
                .raw() as i64;
        }
        sum as f64 / n as f64
    }

    #[test]
    fn stochastic_round_unbiased_frequency() {
        let m = empirical_mean(2.25, 7, 100_000);
        assert!((m - 2.25).abs() < 0.01, "mean {m}");
        let m = empirical_mean(-0.5, 11, 100_000);
        assert!((m + 0.5).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn stochastic_round_minus_half_only_hits_neighbours() {
        let wide = q(-0.5, QFormat::UPDATE);
        let mut p = Prng::new(99);
        for _ in 0..1000 {
            let r = stochastic_round(wide, QFormat::WEIGHT_INT, &mut p).unwrap().raw();
            assert!(r == 0 || r == -1);
        }
    }

    #[test]
    fn uniform_int_covers_inclusive_range() {
        let mut p = Prng::new(3);
        let mut seen = [false; 33];
        for _ in 0..10_000 {
            let v = p.uniform_int(-16, 16);
            assert!((-16..=16).contains(&v));
            seen[(v + 16) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn add_saturates_and_commutes(a in -32768i32..=32767, b in -32768i32..=32767) {
                let f = QFormat::MEMBRANE;
                let x = QValue::from_raw(a, f).unwrap();
                let y = QValue::from_raw(b, f).unwrap();
                let s = q_add_sat(x, y).unwrap();
                prop_assert_eq!(s, q_add_sat(y, x).unwrap());
                prop_assert!(s.raw() >= f.min_raw() && s.raw() <= f.max_raw());
                prop_assert_eq!(s.raw() as i64, (a as i64 + b as i64).clamp(-32768, 32767));
            }

            #[test]
            fn stochastic_round_brackets_input(raw in -(1i32 << 22)..(1i32 << 22), seed in 1u32..) {
                let mut p = Prng::new(seed);
                let r = stochastic_round_raw(raw as i64, 16, &mut p);
                let lo = (raw as i64) >> 16;
                prop_assert!(r == lo || r == lo + 1);
            }
        }
    }
}
