use super::ProductTerm;

/// Left headroom given to each FP4 product before right-aligning to the
/// larger exponent. FP4 product exponents span 2..=6, so alignment shifts
/// never exceed 4 and no bit is lost.
pub const L1_HEADROOM_BITS: u32 = 5;

/// One 2-bit x 2-bit FP4 significand product with its 3-bit exponent sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fp4Product {
    pub negative: bool,
    /// `(1.M | 0.M) * (1.M | 0.M)` as an integer, at most 4 bits.
    pub significand: u8,
    /// Sum of the two element exponents, at most 3 bits.
    pub exponent: u8,
}

impl Fp4Product {
    pub const ZERO: Fp4Product = Fp4Product {
        negative: false,
        significand: 0,
        exponent: 0,
    };
}

/// Level-1 adder of the MXFP4 mode: two products are aligned to the larger
/// exponent (with [`L1_HEADROOM_BITS`] of fraction headroom) and summed into
/// one 10-bit level-2 term. Four of these feed the level-2 tree, giving
/// eight products per cycle.
///
/// The returned term weighs `2^(exponent - L1_HEADROOM_BITS)` per unit of
/// its significand, relative to the products' own units.
pub fn l1_reduce_fp4(products: &[Fp4Product; 2]) -> ProductTerm {
    let Some(emax) = products
        .iter()
        .filter(|p| p.significand != 0)
        .map(|p| p.exponent)
        .max()
    else {
        return ProductTerm::ZERO;
    };
    let mut sum: i32 = 0;
    for p in products.iter().filter(|p| p.significand != 0) {
        debug_assert!(p.significand < 16 && p.exponent < 8);
        let shift = L1_HEADROOM_BITS as i32 - (emax - p.exponent) as i32;
        let aligned = if shift >= 0 {
            (p.significand as i32) << shift
        } else {
            (p.significand as i32) >> -shift
        };
        sum += if p.negative { -aligned } else { aligned };
    }
    ProductTerm::new(sum < 0, sum.unsigned_abs() as u16, emax)
}
