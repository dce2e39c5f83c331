//! Bit-accurate models of the MX MAC reduction trees.
//!
//! Every tree consumes four [`ProductTerm`]s per cycle plus the stored
//! accumulator and returns the new accumulator value. A term's real value is
//!
//! ```text
//! (-1)^sign * significand * 2^(exponent + term_exponent_offset)
//!           * 2^(shared_a - 127) * 2^(shared_b - 127)
//! ```
//!
//! where `term_exponent_offset` is fixed by the precision mode (it absorbs
//! element biases and fraction widths) and the shared codes are the E8M0
//! block scales of both operands.
//!
//! With `S = M_acc + 1`, the level-2 stage of the FP32-addition and hybrid
//! trees right-aligns the 10-bit significands to the largest exponent inside
//! a `W = S + 2` bit field and sums them into a `P = S + 4` bit product-sum.
//! Bits shifted out of the field are discarded.

mod acc;
mod cost;
mod l1;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use acc::{AccumulatorValue, ACC_EXP_MAX, ACC_EXP_MIN, MAX_MANTISSA_BITS, MIN_MANTISSA_BITS};
pub use cost::{cost_report, CostReport};
pub use l1::{l1_reduce_fp4, Fp4Product, L1_HEADROOM_BITS};

use crate::error::MxError;
use acc::{add_rounded, check_mantissa_bits, round_wide, window_add, Fixed, Wide};

pub const TERMS_PER_CYCLE: usize = 4;
pub const TERM_SIGNIFICAND_BITS: u32 = 10;
pub const TERM_EXPONENT_BITS: u32 = 6;
/// Width of the anchored integer used by the long-integer tree: a 64-position
/// exponent range, a 10-bit significand and two carry bits for four terms.
pub const LONG_INTEGER_WINDOW: i32 = 76;

/// Sign, significand and exponent of one level-2 input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProductTerm {
    pub negative: bool,
    pub significand: u16,
    pub exponent: u8,
}

impl ProductTerm {
    pub const ZERO: ProductTerm = ProductTerm {
        negative: false,
        significand: 0,
        exponent: 0,
    };

    /// Panics if the significand needs more than 10 bits or the exponent
    /// more than 6.
    pub fn new(negative: bool, significand: u16, exponent: u8) -> Self {
        assert!(
            (significand as u32) < (1 << TERM_SIGNIFICAND_BITS),
            "term significand {significand} exceeds 10 bits"
        );
        assert!(
            (exponent as u32) < (1 << TERM_EXPONENT_BITS),
            "term exponent {exponent} exceeds 6 bits"
        );
        ProductTerm {
            negative,
            significand,
            exponent,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.significand == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeVariant {
    /// Normalize the product-sum to the accumulator format, then add.
    Fp32Addition,
    /// Lossless anchored integer product-sum with early accumulation.
    LongInteger,
    /// Early accumulation into a `(P + 2S + 1)`-bit window.
    HybridIter1,
    /// Early accumulation with a side-selecting MUX, `2S + 5` bits.
    HybridIter2,
}

impl TreeVariant {
    pub const ALL: [TreeVariant; 4] = [
        TreeVariant::Fp32Addition,
        TreeVariant::LongInteger,
        TreeVariant::HybridIter1,
        TreeVariant::HybridIter2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TreeVariant::Fp32Addition => "fp32_addition",
            TreeVariant::LongInteger => "long_integer",
            TreeVariant::HybridIter1 => "hybrid_iter1",
            TreeVariant::HybridIter2 => "hybrid_iter2",
        }
    }
}

impl fmt::Display for TreeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TreeVariant {
    type Err = MxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| MxError::UnknownName {
                kind: "tree variant",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeConfig {
    pub variant: TreeVariant,
    /// Accumulator mantissa width `M_acc`, 2..=23.
    pub acc_mantissa_bits: u32,
    pub shared_exponent_a: u8,
    pub shared_exponent_b: u8,
    /// Mode-dependent scaling of the term encoding (see module docs).
    pub term_exponent_offset: i32,
}

impl TreeConfig {
    pub fn new(variant: TreeVariant, acc_mantissa_bits: u32) -> Self {
        check_mantissa_bits(acc_mantissa_bits);
        TreeConfig {
            variant,
            acc_mantissa_bits,
            shared_exponent_a: 127,
            shared_exponent_b: 127,
            term_exponent_offset: 0,
        }
    }

    pub fn with_shared(mut self, a: u8, b: u8) -> Self {
        self.shared_exponent_a = a;
        self.shared_exponent_b = b;
        self
    }

    pub fn with_offset(mut self, offset: i32) -> Self {
        self.term_exponent_offset = offset;
        self
    }

    pub fn significand_bits(&self) -> u32 {
        self.acc_mantissa_bits + 1
    }

    /// Exponent added to every term exponent to obtain its real weight.
    fn base_exponent(&self) -> i32 {
        self.term_exponent_offset + self.shared_exponent_a as i32 + self.shared_exponent_b as i32
            - 254
    }
}

/// Runs one accumulation step through the tree selected by `cfg.variant`.
pub fn reduce(
    terms: &[ProductTerm; TERMS_PER_CYCLE],
    acc: &AccumulatorValue,
    cfg: &TreeConfig,
) -> AccumulatorValue {
    match cfg.variant {
        TreeVariant::Fp32Addition => tree_fp32_addition(terms, acc, cfg),
        TreeVariant::LongInteger => tree_long_integer(terms, acc, cfg),
        TreeVariant::HybridIter1 | TreeVariant::HybridIter2 => tree_hybrid(terms, acc, cfg),
    }
}

fn check_acc(acc: &AccumulatorValue, cfg: &TreeConfig) {
    assert_eq!(
        acc.mantissa_bits, cfg.acc_mantissa_bits,
        "accumulator width does not match the tree configuration"
    );
}

/// Exact level-2 product-sum after alignment in a `W`-bit field: the signed
/// integer sum and the absolute exponent of its LSB. `None` when every term
/// is zero.
fn level2_product_sum(terms: &[ProductTerm; TERMS_PER_CYCLE], cfg: &TreeConfig) -> Option<Fixed> {
    let emax = terms.iter().filter(|t| !t.is_zero()).map(|t| t.exponent).max()?;
    let w = (cfg.significand_bits() + 2) as i32;
    let mut sum: i64 = 0;
    for t in terms.iter().filter(|t| !t.is_zero()) {
        let shift = w - TERM_SIGNIFICAND_BITS as i32 - (emax - t.exponent) as i32;
        let sig = t.significand as i64;
        let aligned = if shift >= 0 {
            sig << shift
        } else if shift > -63 {
            sig >> -shift
        } else {
            0
        };
        sum += if t.negative { -aligned } else { aligned };
    }
    let lsb = emax as i32 + cfg.base_exponent() - (w - TERM_SIGNIFICAND_BITS as i32);
    Some(Fixed::from_signed(sum as i128, lsb))
}

/// FP32-addition tree: level-2 product-sum is normalized and rounded to the
/// accumulator format, scaled by the shared exponents, and then added to the
/// stored value by a correctly rounded floating-point adder. Two roundings.
pub fn tree_fp32_addition(
    terms: &[ProductTerm; TERMS_PER_CYCLE],
    acc: &AccumulatorValue,
    cfg: &TreeConfig,
) -> AccumulatorValue {
    check_acc(acc, cfg);
    let m = cfg.acc_mantissa_bits;
    let Some(ps) = level2_product_sum(terms, cfg) else {
        return *acc;
    };
    let rounded_ps = round_wide(Wide::exact(ps), m);
    let mut out = add_rounded(rounded_ps.as_fixed(), acc.as_fixed(), m);
    out.saturated |= acc.saturated || rounded_ps.saturated;
    out
}

/// Long-integer tree: the four terms are summed losslessly in an anchored
/// integer (bit `i` weighs `2^(i + base)`), the accumulator is aligned
/// against it with an `S + 2` bit low extension and reattachment of any
/// lower bits, and the sum is normalized and rounded once.
pub fn tree_long_integer(
    terms: &[ProductTerm; TERMS_PER_CYCLE],
    acc: &AccumulatorValue,
    cfg: &TreeConfig,
) -> AccumulatorValue {
    check_acc(acc, cfg);
    let m = cfg.acc_mantissa_bits;
    let s = cfg.significand_bits() as i32;
    let mut sum: i128 = 0;
    for t in terms {
        let v = (t.significand as i128) << t.exponent;
        sum += if t.negative { -v } else { v };
    }
    if terms.iter().all(ProductTerm::is_zero) {
        return *acc;
    }
    let anchor = cfg.base_exponent();
    let ps = Fixed::from_signed(sum, anchor);
    let mut out = if ps.is_zero() {
        *acc
    } else if acc.zero {
        round_wide(Wide::exact(ps), m)
    } else {
        let a = acc.as_fixed();
        let window_bottom = anchor - (s + 2);
        let bottom = if a.msb() >= anchor + LONG_INTEGER_WINDOW {
            // Accumulator above the anchored window: the product-sum is
            // aligned underneath it instead.
            a.lsb - (s + 2)
        } else if a.msb() >= window_bottom {
            // Overlapping: low accumulator bits are reattached.
            window_bottom.min(a.lsb)
        } else {
            window_bottom
        };
        round_wide(window_add(ps, a, bottom), m)
    };
    out.saturated |= acc.saturated;
    out
}

/// Hybrid tree (both iterations). The level-2 product-sum is not
/// normalized; the accumulator is aligned against it directly.
///
/// Let `p` be the offset of the accumulator LSB above the product-sum LSB.
/// Iteration 1 keeps a window reaching `S` bits below the product-sum and
/// `S + 1` bits above it. Iteration 2 extends the product-sum by `S` bits
/// on only one side, chosen by the sign of `p`. In both, an accumulator that
/// would overflow the top of the window slides the window up, pushing
/// product-sum bits into the sticky bit.
pub fn tree_hybrid(
    terms: &[ProductTerm; TERMS_PER_CYCLE],
    acc: &AccumulatorValue,
    cfg: &TreeConfig,
) -> AccumulatorValue {
    check_acc(acc, cfg);
    let m = cfg.acc_mantissa_bits;
    let s = cfg.significand_bits() as i32;
    let p_width = s + 4;
    let Some(ps) = level2_product_sum(terms, cfg) else {
        return *acc;
    };
    let mut out = if acc.zero {
        round_wide(Wide::exact(ps), m)
    } else {
        let a = acc.as_fixed();
        let p = a.lsb - ps.lsb;
        let slide = (p - p_width).max(0);
        let bottom = match cfg.variant {
            TreeVariant::HybridIter1 => ps.lsb - s + slide,
            TreeVariant::HybridIter2 => {
                if p > 0 {
                    ps.lsb + slide
                } else {
                    ps.lsb - s
                }
            }
            v => panic!("tree_hybrid called with variant {v}"),
        };
        round_wide(window_add(ps, a, bottom), m)
    };
    out.saturated |= acc.saturated;
    out
}
