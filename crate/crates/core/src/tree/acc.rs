//! Accumulator register format and the shared normalize/round machinery.
//!
//! The accumulator holds `(-1)^s * 1.m * 2^e` with an `M`-bit mantissa
//! (significand width `S = M + 1`) and a 12-bit signed exponent; there are
//! no subnormals. At `M = 23` every FP32 normal value is representable.

use std::fmt;

use crate::format::pow2;

/// Smallest and largest exponent of the leading significand bit.
pub const ACC_EXP_MIN: i32 = -2048;
pub const ACC_EXP_MAX: i32 = 2047;

pub const MIN_MANTISSA_BITS: u32 = 2;
pub const MAX_MANTISSA_BITS: u32 = 23;

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct AccumulatorValue {
    pub negative: bool,
    /// Unbiased exponent of the leading (hidden) bit.
    pub exponent: i32,
    /// Fraction bits below the hidden one, `< 2^mantissa_bits`.
    pub mantissa: u32,
    pub mantissa_bits: u32,
    pub zero: bool,
    /// Set once any operation overflowed the internal exponent range.
    pub saturated: bool,
}

impl fmt::Debug for AccumulatorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.zero {
            write!(f, "Acc[M{}](0", self.mantissa_bits)?;
        } else {
            write!(
                f,
                "Acc[M{}]({}1.{:0w$b}p{}",
                self.mantissa_bits,
                if self.negative { "-" } else { "+" },
                self.mantissa,
                self.exponent,
                w = self.mantissa_bits as usize
            )?;
        }
        if self.saturated {
            write!(f, ", saturated")?;
        }
        write!(f, ")")
    }
}

impl AccumulatorValue {
    pub fn zero(mantissa_bits: u32) -> Self {
        check_mantissa_bits(mantissa_bits);
        AccumulatorValue {
            negative: false,
            exponent: 0,
            mantissa: 0,
            mantissa_bits,
            zero: true,
            saturated: false,
        }
    }

    pub fn significand_bits(&self) -> u32 {
        self.mantissa_bits + 1
    }

    /// Rounds a finite `f64` into the accumulator format (RNE).
    pub fn from_f64(v: f64, mantissa_bits: u32) -> Self {
        assert!(v.is_finite(), "accumulator input must be finite");
        check_mantissa_bits(mantissa_bits);
        if v == 0.0 {
            return Self::zero(mantissa_bits);
        }
        let bits = v.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mag, lsb) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        round_wide(
            Wide {
                negative: v < 0.0,
                mag: mag as u128,
                lsb,
                sticky: false,
            },
            mantissa_bits,
        )
    }

    /// Exact value as `f64` when it fits; saturated values still convert.
    pub fn to_f64(&self) -> f64 {
        if self.zero {
            return 0.0;
        }
        let sig = ((1u64 << self.mantissa_bits) | self.mantissa as u64) as f64;
        let e = self.exponent - self.mantissa_bits as i32;
        // Split the scaling so neither factor under/overflows prematurely.
        let half = e / 2;
        let v = sig * pow2(half) * pow2(e - half);
        if self.negative {
            -v
        } else {
            v
        }
    }

    /// Exact signed fixed-point view `(negative, significand, lsb exponent)`.
    pub(crate) fn as_fixed(&self) -> Fixed {
        if self.zero {
            return Fixed::ZERO;
        }
        Fixed {
            negative: self.negative,
            mag: ((1u128 << self.mantissa_bits) | self.mantissa as u128),
            lsb: self.exponent - self.mantissa_bits as i32,
        }
    }

    /// Multiplies by `2^k` exactly (flagging saturation on overflow).
    pub fn scaled_pow2(&self, k: i32) -> Self {
        if self.zero {
            return *self;
        }
        let mut out = round_wide(Wide::exact(self.as_fixed().shifted(k)), self.mantissa_bits);
        out.saturated |= self.saturated;
        out
    }
}

pub(crate) fn check_mantissa_bits(m: u32) {
    assert!(
        (MIN_MANTISSA_BITS..=MAX_MANTISSA_BITS).contains(&m),
        "accumulator mantissa width {m} outside {MIN_MANTISSA_BITS}..={MAX_MANTISSA_BITS}"
    );
}

/// Exact signed value `(-1)^negative * mag * 2^lsb`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Fixed {
    pub negative: bool,
    pub mag: u128,
    pub lsb: i32,
}

impl Fixed {
    pub const ZERO: Fixed = Fixed {
        negative: false,
        mag: 0,
        lsb: 0,
    };

    pub fn from_signed(v: i128, lsb: i32) -> Fixed {
        Fixed {
            negative: v < 0,
            mag: v.unsigned_abs(),
            lsb,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mag == 0
    }

    /// Absolute position of the most significant set bit.
    pub fn msb(&self) -> i32 {
        debug_assert!(self.mag != 0);
        self.lsb + 127 - self.mag.leading_zeros() as i32
    }

    pub fn shifted(self, k: i32) -> Fixed {
        Fixed {
            lsb: self.lsb + k,
            ..self
        }
    }
}

/// A window-truncated value: `(-1)^negative * (mag + eps) * 2^lsb` where
/// `eps` is in `(0, 1)` when `sticky` is set and zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Wide {
    pub negative: bool,
    pub mag: u128,
    pub lsb: i32,
    pub sticky: bool,
}

impl Wide {
    pub fn exact(f: Fixed) -> Wide {
        Wide {
            negative: f.negative,
            mag: f.mag,
            lsb: f.lsb,
            sticky: false,
        }
    }
}

/// Places one operand into a window whose least significant bit sits at
/// `bottom`. Returns the kept signed integer and whether nonzero bits fell
/// below the window.
fn place(op: Fixed, bottom: i32) -> (i128, bool) {
    if op.mag == 0 {
        return (0, false);
    }
    let (kept, lost) = if op.lsb >= bottom {
        let sh = (op.lsb - bottom) as u32;
        debug_assert!(sh + 128 - op.mag.leading_zeros() <= 126, "window overflow");
        (op.mag << sh, false)
    } else {
        let sh = (bottom - op.lsb) as u32;
        if sh >= 128 {
            (0, true)
        } else {
            (op.mag >> sh, op.mag & ((1u128 << sh) - 1) != 0)
        }
    };
    let signed = if op.negative { -(kept as i128) } else { kept as i128 };
    (signed, lost)
}

/// Adds two operands inside a fixed-point window with LSB at `bottom`.
///
/// Bits of an operand below the window are collapsed into a sticky bit; the
/// remainder's sign is tracked so that subtracting a truncated operand
/// yields `(|T| - 1) + (1 - eps)` rather than `|T| + eps`.
pub(crate) fn window_add(a: Fixed, b: Fixed, bottom: i32) -> Wide {
    let (va, lost_a) = place(a, bottom);
    let (vb, lost_b) = place(b, bottom);
    let total = va + vb;
    let (lost, lost_negative) = match (lost_a, lost_b) {
        (false, false) => (false, false),
        (true, false) => (true, a.negative),
        (false, true) => (true, b.negative),
        (true, true) => {
            // Only reachable when both operands straddle the window bottom,
            // which no tree configuration produces. Fold as a plain sticky.
            debug_assert!(a.negative == b.negative, "ambiguous sticky");
            (true, a.negative)
        }
    };
    if !lost {
        return Wide {
            negative: total < 0,
            mag: total.unsigned_abs(),
            lsb: bottom,
            sticky: false,
        };
    }
    if total == 0 || (total < 0) == lost_negative {
        Wide {
            negative: if total == 0 { lost_negative } else { total < 0 },
            mag: total.unsigned_abs(),
            lsb: bottom,
            sticky: true,
        }
    } else {
        Wide {
            negative: total < 0,
            mag: total.unsigned_abs() - 1,
            lsb: bottom,
            sticky: true,
        }
    }
}

/// Normalizes and rounds (to nearest, ties to even) into an `M`-bit
/// accumulator. A zero magnitude yields zero even when the sticky bit is
/// set: the normalizer only sees bits inside the window.
pub(crate) fn round_wide(w: Wide, mantissa_bits: u32) -> AccumulatorValue {
    if w.mag == 0 {
        return AccumulatorValue::zero(mantissa_bits);
    }
    let s = mantissa_bits + 1;
    let width = 128 - w.mag.leading_zeros();
    let mut exponent = w.lsb + width as i32 - 1;
    let sig = if width <= s {
        // Left-normalize; anything below the window is unknown and shifts in
        // as zeros.
        (w.mag << (s - width)) as u64
    } else {
        let shift = width - s;
        let mut kept = (w.mag >> shift) as u64;
        let guard = (w.mag >> (shift - 1)) & 1 == 1;
        let rest = w.sticky || (w.mag & ((1u128 << (shift - 1)) - 1)) != 0;
        if guard && (rest || kept & 1 == 1) {
            kept += 1;
            if kept == 1u64 << s {
                kept >>= 1;
                exponent += 1;
            }
        }
        kept
    };
    finish(w.negative, exponent, sig, mantissa_bits)
}

fn finish(negative: bool, exponent: i32, sig: u64, mantissa_bits: u32) -> AccumulatorValue {
    if exponent > ACC_EXP_MAX {
        return AccumulatorValue {
            negative,
            exponent: ACC_EXP_MAX,
            mantissa: ((1u64 << mantissa_bits) - 1) as u32,
            mantissa_bits,
            zero: false,
            saturated: true,
        };
    }
    if exponent < ACC_EXP_MIN {
        return AccumulatorValue {
            saturated: true,
            ..AccumulatorValue::zero(mantissa_bits)
        };
    }
    AccumulatorValue {
        negative,
        exponent,
        mantissa: (sig & ((1u64 << mantissa_bits) - 1)) as u32,
        mantissa_bits,
        zero: false,
        saturated: false,
    }
}

/// Correctly rounded sum of two exact operands (IEEE-style add: align,
/// guard/round/sticky, round once).
pub(crate) fn add_rounded(a: Fixed, b: Fixed, mantissa_bits: u32) -> AccumulatorValue {
    if a.is_zero() && b.is_zero() {
        return AccumulatorValue::zero(mantissa_bits);
    }
    let bottom = if a.is_zero() {
        b.lsb
    } else if b.is_zero() {
        a.lsb
    } else {
        let hi = a.msb().max(b.msb());
        let s = (mantissa_bits + 1) as i32;
        a.lsb.min(b.lsb).max(hi - 2 * s - 8)
    };
    round_wide(window_add(a, b, bottom), mantissa_bits)
}
