//! The six MX element formats and their scalar encode/decode rules.
//!
//! Element values are decoded *without* the shared block scale. FP formats
//! follow the usual `sign * (1.m | 0.m) * 2^(e - bias)` rule with subnormals
//! at a zero exponent field; INT8 is two's complement with six fractional
//! bits, so code `64` decodes to `1.0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::MxError;

/// Name of one MX element format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementFormat {
    #[serde(rename = "int8")]
    Int8,
    #[serde(rename = "fp8_e5m2")]
    Fp8E5M2,
    #[serde(rename = "fp8_e4m3")]
    Fp8E4M3,
    #[serde(rename = "fp6_e3m2")]
    Fp6E3M2,
    #[serde(rename = "fp6_e2m3")]
    Fp6E2M3,
    #[serde(rename = "fp4_e2m1")]
    Fp4E2M1,
}

/// How the all-ones exponent field is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialCodes {
    /// Every code is a finite number.
    None,
    /// IEEE-style: all-ones exponent is Inf (zero mantissa) or NaN.
    InfNan,
    /// Only the all-ones exponent *and* mantissa pattern is NaN; no Inf.
    NanOnly,
}

/// Static description of one element format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatSpec {
    pub name: ElementFormat,
    pub exponent_bits: u32,
    /// Mantissa bits for FP formats; fractional bits for INT8.
    pub mantissa_bits: u32,
    pub total_bits: u32,
    pub bias: i32,
    /// Exponent of the largest power of two not exceeding the max magnitude.
    pub max_normal_exponent: i32,
    pub specials: SpecialCodes,
}

pub const INT8: FormatSpec = FormatSpec {
    name: ElementFormat::Int8,
    exponent_bits: 0,
    mantissa_bits: 6,
    total_bits: 8,
    bias: 0,
    max_normal_exponent: 0,
    specials: SpecialCodes::None,
};

pub const FP8_E5M2: FormatSpec = FormatSpec {
    name: ElementFormat::Fp8E5M2,
    exponent_bits: 5,
    mantissa_bits: 2,
    total_bits: 8,
    bias: 15,
    max_normal_exponent: 15,
    specials: SpecialCodes::InfNan,
};

pub const FP8_E4M3: FormatSpec = FormatSpec {
    name: ElementFormat::Fp8E4M3,
    exponent_bits: 4,
    mantissa_bits: 3,
    total_bits: 8,
    bias: 7,
    max_normal_exponent: 8,
    specials: SpecialCodes::NanOnly,
};

pub const FP6_E3M2: FormatSpec = FormatSpec {
    name: ElementFormat::Fp6E3M2,
    exponent_bits: 3,
    mantissa_bits: 2,
    total_bits: 6,
    bias: 3,
    max_normal_exponent: 4,
    specials: SpecialCodes::None,
};

pub const FP6_E2M3: FormatSpec = FormatSpec {
    name: ElementFormat::Fp6E2M3,
    exponent_bits: 2,
    mantissa_bits: 3,
    total_bits: 6,
    bias: 1,
    max_normal_exponent: 2,
    specials: SpecialCodes::None,
};

pub const FP4_E2M1: FormatSpec = FormatSpec {
    name: ElementFormat::Fp4E2M1,
    exponent_bits: 2,
    mantissa_bits: 1,
    total_bits: 4,
    bias: 1,
    max_normal_exponent: 2,
    specials: SpecialCodes::None,
};

impl ElementFormat {
    pub const ALL: [ElementFormat; 6] = [
        ElementFormat::Int8,
        ElementFormat::Fp8E5M2,
        ElementFormat::Fp8E4M3,
        ElementFormat::Fp6E3M2,
        ElementFormat::Fp6E2M3,
        ElementFormat::Fp4E2M1,
    ];

    pub fn spec(self) -> &'static FormatSpec {
        match self {
            ElementFormat::Int8 => &INT8,
            ElementFormat::Fp8E5M2 => &FP8_E5M2,
            ElementFormat::Fp8E4M3 => &FP8_E4M3,
            ElementFormat::Fp6E3M2 => &FP6_E3M2,
            ElementFormat::Fp6E2M3 => &FP6_E2M3,
            ElementFormat::Fp4E2M1 => &FP4_E2M1,
        }
    }

    /// Numeric id used in the binary tensor header.
    pub fn id(self) -> u8 {
        match self {
            ElementFormat::Int8 => 0,
            ElementFormat::Fp8E5M2 => 1,
            ElementFormat::Fp8E4M3 => 2,
            ElementFormat::Fp6E3M2 => 3,
            ElementFormat::Fp6E2M3 => 4,
            ElementFormat::Fp4E2M1 => 5,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementFormat::Int8 => "int8",
            ElementFormat::Fp8E5M2 => "fp8_e5m2",
            ElementFormat::Fp8E4M3 => "fp8_e4m3",
            ElementFormat::Fp6E3M2 => "fp6_e3m2",
            ElementFormat::Fp6E2M3 => "fp6_e2m3",
            ElementFormat::Fp4E2M1 => "fp4_e2m1",
        }
    }
}

impl fmt::Display for ElementFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElementFormat {
    type Err = MxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        let norm = norm.strip_prefix("mx").unwrap_or(&norm);
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == norm)
            .ok_or_else(|| MxError::UnknownName {
                kind: "element format",
                name: s.to_string(),
            })
    }
}

/// Sign / integer significand / exponent view of a finite element code.
///
/// `value = (-1)^negative * significand * 2^(exponent - bias - mantissa_bits)`
/// for FP formats (subnormals use exponent 1 with a zero leading bit) and
/// `value = (-1)^negative * significand * 2^-6` for INT8 (exponent 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposed {
    pub negative: bool,
    pub significand: u32,
    pub exponent: u32,
}

impl FormatSpec {
    pub fn is_int(&self) -> bool {
        self.name == ElementFormat::Int8
    }

    pub fn code_count(&self) -> u32 {
        1 << self.total_bits
    }

    fn code_mask(&self) -> u8 {
        ((1u32 << self.total_bits) - 1) as u8
    }

    fn fields(&self, code: u8) -> (bool, u32, u32) {
        let code = (code & self.code_mask()) as u32;
        let sign = (code >> (self.total_bits - 1)) & 1 == 1;
        let exp = (code >> self.mantissa_bits) & ((1 << self.exponent_bits) - 1);
        let man = code & ((1 << self.mantissa_bits) - 1);
        (sign, exp, man)
    }

    /// True for Inf/NaN codes.
    pub fn is_special(&self, code: u8) -> bool {
        if self.is_int() {
            return false;
        }
        let (_, exp, man) = self.fields(code);
        let exp_ones = (1 << self.exponent_bits) - 1;
        let man_ones = (1 << self.mantissa_bits) - 1;
        match self.specials {
            SpecialCodes::None => false,
            SpecialCodes::InfNan => exp == exp_ones,
            SpecialCodes::NanOnly => exp == exp_ones && man == man_ones,
        }
    }

    /// Largest finite magnitude.
    pub fn max_value(&self) -> f64 {
        if self.is_int() {
            return 127.0 / 64.0;
        }
        let top = (1u32 << (self.mantissa_bits + 1)) - 1;
        let top = if self.specials == SpecialCodes::NanOnly { top - 1 } else { top };
        top as f64 * pow2(self.max_normal_exponent - self.mantissa_bits as i32)
    }

    /// Smallest positive magnitude (the smallest subnormal, or 1/64 for INT8).
    pub fn min_positive(&self) -> f64 {
        if self.is_int() {
            return 1.0 / 64.0;
        }
        pow2(1 - self.bias - self.mantissa_bits as i32)
    }

    pub fn decompose(&self, code: u8) -> Option<Decomposed> {
        if self.is_int() {
            let v = code as i8 as i32;
            return Some(Decomposed {
                negative: v < 0,
                significand: v.unsigned_abs(),
                exponent: 0,
            });
        }
        if self.is_special(code) {
            return None;
        }
        let (negative, exp, man) = self.fields(code);
        let hidden = if exp == 0 { 0 } else { 1 << self.mantissa_bits };
        Some(Decomposed {
            negative,
            significand: hidden | man,
            exponent: exp.max(1),
        })
    }

    /// Decodes one element (no shared scale). Inf/NaN codes decode to the
    /// matching non-finite `f64`.
    pub fn decode(&self, code: u8) -> f64 {
        if self.is_int() {
            return (code as i8) as f64 / 64.0;
        }
        let (negative, _exp, man) = self.fields(code);
        let sign = if negative { -1.0 } else { 1.0 };
        if self.is_special(code) {
            return if self.specials == SpecialCodes::InfNan && man == 0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            };
        }
        let d = self.decompose(code).expect("finite code");
        sign * d.significand as f64
            * pow2(d.exponent as i32 - self.bias - self.mantissa_bits as i32)
    }

    /// Round-to-nearest-even encode with saturation to the largest finite
    /// magnitude. INT8 saturates symmetrically to +-127/64.
    pub fn encode(&self, value: f64) -> u8 {
        debug_assert!(!value.is_nan(), "cannot encode NaN");
        if self.is_int() {
            let n = (value * 64.0).round_ties_even().clamp(-127.0, 127.0);
            return (n as i8) as u8;
        }
        let negative = value.is_sign_negative();
        let mag = value.abs();
        let m = self.mantissa_bits;
        let sign_bit = if negative { 1u32 << (self.total_bits - 1) } else { 0 };

        let max = self.max_value();
        let (field, man) = if mag >= max {
            self.fields_of_max()
        } else {
            let emin = 1 - self.bias;
            let e = if mag == 0.0 { emin } else { floor_log2(mag).max(emin) };
            let quantum = pow2(e - m as i32);
            let n = (mag / quantum).round_ties_even() as u32;
            if n as f64 * quantum > max {
                self.fields_of_max()
            } else if n >= 1 << m {
                // Normal; rounding may carry into the next binade.
                let (n, e) = if n == 1 << (m + 1) { (n >> 1, e + 1) } else { (n, e) };
                ((e + self.bias) as u32, n - (1 << m))
            } else {
                // Only reachable for e == emin: subnormal (or zero).
                (0, n)
            }
        };
        (sign_bit | (field << m) | man) as u8
    }

    fn fields_of_max(&self) -> (u32, u32) {
        let exp_ones = (1u32 << self.exponent_bits) - 1;
        let man_ones = (1u32 << self.mantissa_bits) - 1;
        match self.specials {
            SpecialCodes::None => (exp_ones, man_ones),
            SpecialCodes::InfNan => (exp_ones - 1, man_ones),
            SpecialCodes::NanOnly => (exp_ones, man_ones - 1),
        }
    }
}

/// Free-function form of [`FormatSpec::decode`].
pub fn decode_element(spec: &FormatSpec, code: u8) -> f64 {
    spec.decode(code)
}

/// Free-function form of [`FormatSpec::encode`].
pub fn encode_element(spec: &FormatSpec, value: f64) -> u8 {
    spec.encode(value)
}

/// `2^e` as an exact `f64` (subnormal results included, zero below).
pub fn pow2(e: i32) -> f64 {
    if e > 1023 {
        f64::INFINITY
    } else if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if e >= -1074 {
        f64::from_bits(1u64 << (e + 1074))
    } else {
        0.0
    }
}

/// `floor(log2(x))` for a positive finite `x`, computed from the bit pattern.
pub fn floor_log2(x: f64) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i32;
    if e == 0 {
        let frac = bits & ((1u64 << 52) - 1);
        -1074 + (63 - frac.leading_zeros() as i32)
    } else {
        e - 1023
    }
}

#[cfg(test)]
#[allow(clippy::unusual_byte_groupings)]
mod tests {
    use super::*;

    #[test]
    fn table_bit_counts() {
        let expect = [
            (ElementFormat::Fp8E5M2, 5, 2, 8),
            (ElementFormat::Fp8E4M3, 4, 3, 8),
            (ElementFormat::Fp6E3M2, 3, 2, 6),
            (ElementFormat::Fp6E2M3, 2, 3, 6),
            (ElementFormat::Fp4E2M1, 2, 1, 4),
        ];
        for (f, e, m, t) in expect {
            let s = f.spec();
            assert_eq!((s.exponent_bits, s.mantissa_bits, s.total_bits), (e, m, t), "{f}");
            assert_eq!(s.total_bits, 1 + s.exponent_bits + s.mantissa_bits);
        }
        assert_eq!(INT8.total_bits, 8);
    }

    #[test]
    fn serde_names_match_display() {
        for f in ElementFormat::ALL {
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{f}\""));
        }
    }

    #[test]
    fn decode_examples() {
        assert_eq!(FP8_E4M3.decode(0b0_0111_000), 1.0);
        assert_eq!(FP4_E2M1.decode(0b0_11_1), 6.0);
        assert_eq!(INT8.decode(64), 1.0);
        assert_eq!(INT8.decode(0x80), -2.0);
        assert!(FP8_E5M2.decode(0b0_11111_00).is_infinite());
        assert!(FP8_E5M2.decode(0b1_11111_01).is_nan());
        assert!(FP8_E4M3.decode(0b0_1111_111).is_nan());
        assert_eq!(FP8_E4M3.decode(0b0_1111_110), 448.0);
    }

    #[test]
    fn fp4_codes_match_direct_formula() {
        // Direct evaluation of sign * 2^(e-1) * (1 + m/2), subnormal 2^0 * m/2.
        for code in 0u8..16 {
            let s = if code & 0b1000 != 0 { -1.0 } else { 1.0 };
            let e = ((code >> 1) & 0b11) as i32;
            let m = (code & 1) as f64;
            let v = if e == 0 {
                s * (m / 2.0)
            } else {
                s * 2f64.powi(e - 1) * (1.0 + m / 2.0)
            };
            assert_eq!(FP4_E2M1.decode(code), v, "code {code:#06b}");
        }
    }

    #[test]
    fn int8_matches_division_by_64() {
        for code in 0u8..=255 {
            assert_eq!(INT8.decode(code), (code as i8) as f64 / 64.0);
        }
    }

    #[test]
    fn encode_examples() {
        assert_eq!(FP8_E4M3.encode(1.0), 0b0_0111_000);
        assert_eq!(FP4_E2M1.encode(7.0), FP4_E2M1.encode(6.0));
        assert_eq!(FP4_E2M1.decode(FP4_E2M1.encode(7.0)), 6.0);
        assert_eq!(FP6_E2M3.encode(0.0), 0);
        assert_eq!(FP8_E5M2.decode(FP8_E5M2.encode(1e9)), 57344.0);
        assert_eq!(FP8_E4M3.decode(FP8_E4M3.encode(-1e9)), -448.0);
        assert_eq!(INT8.encode(5.0), 127);
        assert_eq!(INT8.encode(-5.0), (-127i8) as u8);
    }

    #[test]
    fn encode_ties_to_even() {
        // FP4 neighbours 1.0 / 1.5 / 2.0: 1.25 ties to 1.0, 1.75 ties to 2.0.
        assert_eq!(FP4_E2M1.decode(FP4_E2M1.encode(1.25)), 1.0);
        assert_eq!(FP4_E2M1.decode(FP4_E2M1.encode(1.75)), 2.0);
        assert_eq!(FP4_E2M1.decode(FP4_E2M1.encode(0.25)), 0.0);
        assert_eq!(FP4_E2M1.decode(FP4_E2M1.encode(0.75)), 1.0);
        // Ties between subnormals: 1/64 steps in E2M3 subnormal range are 1/8.
        assert_eq!(FP6_E2M3.decode(FP6_E2M3.encode(0.0625)), 0.0);
        assert_eq!(FP6_E2M3.decode(FP6_E2M3.encode(0.1875)), 0.25);
    }

    #[test]
    fn negative_zero_keeps_sign() {
        assert_eq!(FP8_E4M3.encode(-0.0), 0b1_0000_000);
        assert_eq!(FP8_E4M3.decode(0b1_0000_000), 0.0);
    }

    #[test]
    fn parse_names() {
        assert_eq!("fp8_e4m3".parse::<ElementFormat>().unwrap(), ElementFormat::Fp8E4M3);
        assert_eq!("MXFP4_E2M1".parse::<ElementFormat>().unwrap(), ElementFormat::Fp4E2M1);
        assert!("fp16".parse::<ElementFormat>().is_err());
    }

    #[test]
    fn floor_log2_edges() {
        assert_eq!(floor_log2(1.0), 0);
        assert_eq!(floor_log2(0.999_999_999), -1);
        assert_eq!(floor_log2(f64::MIN_POSITIVE), -1022);
        assert_eq!(floor_log2(f64::from_bits(1)), -1074);
        assert_eq!(pow2(-1074), f64::from_bits(1));
    }
}
