//! The precision-scalable MX MAC: per-mode multipliers feeding a reduction
//! tree, the accumulator register, and output group quantization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::block::{quantize_group_values, MxBlock, MxMatrix, BLOCK_SIZE, SCALE_NAN};
use crate::error::{MxError, Result};
use crate::format::{ElementFormat, FormatSpec};
use crate::tree::{
    l1_reduce_fp4, reduce, AccumulatorValue, Fp4Product, ProductTerm, TreeConfig, TreeVariant,
    L1_HEADROOM_BITS, TERMS_PER_CYCLE, TERM_SIGNIFICAND_BITS,
};

/// Output group size of the 8x8 array.
pub const GROUP_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrecisionMode {
    #[serde(rename = "mxint8")]
    MxInt8,
    #[serde(rename = "mxfp8_e5m2")]
    MxFp8E5M2,
    #[serde(rename = "mxfp8_e4m3")]
    MxFp8E4M3,
    #[serde(rename = "mxfp6_e3m2")]
    MxFp6E3M2,
    #[serde(rename = "mxfp6_e2m3")]
    MxFp6E2M3,
    #[serde(rename = "mxfp4_e2m1")]
    MxFp4E2M1,
}

impl PrecisionMode {
    pub const ALL: [PrecisionMode; 6] = [
        PrecisionMode::MxInt8,
        PrecisionMode::MxFp8E5M2,
        PrecisionMode::MxFp8E4M3,
        PrecisionMode::MxFp6E3M2,
        PrecisionMode::MxFp6E2M3,
        PrecisionMode::MxFp4E2M1,
    ];

    pub fn format(self) -> ElementFormat {
        match self {
            PrecisionMode::MxInt8 => ElementFormat::Int8,
            PrecisionMode::MxFp8E5M2 => ElementFormat::Fp8E5M2,
            PrecisionMode::MxFp8E4M3 => ElementFormat::Fp8E4M3,
            PrecisionMode::MxFp6E3M2 => ElementFormat::Fp6E3M2,
            PrecisionMode::MxFp6E2M3 => ElementFormat::Fp6E2M3,
            PrecisionMode::MxFp4E2M1 => ElementFormat::Fp4E2M1,
        }
    }

    pub fn from_format(f: ElementFormat) -> Self {
        match f {
            ElementFormat::Int8 => PrecisionMode::MxInt8,
            ElementFormat::Fp8E5M2 => PrecisionMode::MxFp8E5M2,
            ElementFormat::Fp8E4M3 => PrecisionMode::MxFp8E4M3,
            ElementFormat::Fp6E3M2 => PrecisionMode::MxFp6E3M2,
            ElementFormat::Fp6E2M3 => PrecisionMode::MxFp6E2M3,
            ElementFormat::Fp4E2M1 => PrecisionMode::MxFp4E2M1,
        }
    }

    pub fn spec(self) -> &'static FormatSpec {
        self.format().spec()
    }

    /// Element pairs multiplied per MAC cycle.
    pub fn products_per_cycle(self) -> usize {
        match self {
            PrecisionMode::MxInt8 => 1,
            PrecisionMode::MxFp4E2M1 => 8,
            _ => 4,
        }
    }

    /// Left shift that places a product's binary point at a fixed position
    /// of the 10-bit term field, so the level-2 field keeps every product's
    /// leading bits. FP4 terms come out of the level-1 adder already there.
    pub fn product_shift(self) -> u32 {
        match self {
            // The high half of an INT8 product has at most 8 bits.
            PrecisionMode::MxInt8 => 2,
            PrecisionMode::MxFp4E2M1 => 0,
            _ => TERM_SIGNIFICAND_BITS - 2 * (self.spec().mantissa_bits + 1),
        }
    }

    /// Offset turning level-2 term exponents into real exponents (before
    /// the shared scales).
    pub fn term_exponent_offset(self) -> i32 {
        let spec = self.spec();
        let shift = self.product_shift() as i32;
        match self {
            // Products carry 12 fractional bits.
            PrecisionMode::MxInt8 => -12 - shift,
            PrecisionMode::MxFp4E2M1 => {
                -2 * spec.bias - 2 * spec.mantissa_bits as i32 - L1_HEADROOM_BITS as i32
            }
            _ => -2 * spec.bias - 2 * spec.mantissa_bits as i32 - shift,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrecisionMode::MxInt8 => "mxint8",
            PrecisionMode::MxFp8E5M2 => "mxfp8_e5m2",
            PrecisionMode::MxFp8E4M3 => "mxfp8_e4m3",
            PrecisionMode::MxFp6E3M2 => "mxfp6_e3m2",
            PrecisionMode::MxFp6E2M3 => "mxfp6_e2m3",
            PrecisionMode::MxFp4E2M1 => "mxfp4_e2m1",
        }
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrecisionMode {
    type Err = MxError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse::<ElementFormat>()
            .map(Self::from_format)
            .map_err(|_| MxError::UnknownName {
                kind: "precision mode",
                name: s.to_string(),
            })
    }
}

/// Multiplies one cycle's element pairs and returns the four level-2 terms.
///
/// INT8 products (up to 15 bits) are split into a high part at exponent 7
/// and a low 7-bit part at exponent 0 so both fit the 10-bit term field.
/// Significands are left-justified by [`PrecisionMode::product_shift`].
pub fn cycle_terms(mode: PrecisionMode, a: &[u8], b: &[u8]) -> Result<[ProductTerm; TERMS_PER_CYCLE]> {
    let n = mode.products_per_cycle();
    if a.len() != n || b.len() != n {
        return Err(MxError::ElementCount {
            expected: n,
            got: a.len().min(b.len()),
        });
    }
    let spec = mode.spec();
    let decompose = |codes: &[u8], i: usize| {
        spec.decompose(codes[i]).ok_or(MxError::NonFiniteElement {
            position: i,
            code: codes[i],
        })
    };
    let mut terms = [ProductTerm::ZERO; TERMS_PER_CYCLE];
    match mode {
        PrecisionMode::MxInt8 => {
            let (x, y) = (decompose(a, 0)?, decompose(b, 0)?);
            let p = x.significand * y.significand;
            let neg = x.negative != y.negative;
            let sh = mode.product_shift();
            terms[0] = ProductTerm::new(neg, ((p >> 7) << sh) as u16, 7);
            terms[1] = ProductTerm::new(neg, ((p & 0x7f) << sh) as u16, 0);
        }
        PrecisionMode::MxFp4E2M1 => {
            for (t, pair) in terms.iter_mut().enumerate() {
                let mut products = [Fp4Product::ZERO; 2];
                for (j, prod) in products.iter_mut().enumerate() {
                    let i = 2 * t + j;
                    let (x, y) = (decompose(a, i)?, decompose(b, i)?);
                    *prod = Fp4Product {
                        negative: x.negative != y.negative,
                        significand: (x.significand * y.significand) as u8,
                        exponent: (x.exponent + y.exponent) as u8,
                    };
                }
                *pair = l1_reduce_fp4(&products);
            }
        }
        _ => {
            for (i, t) in terms.iter_mut().enumerate() {
                let (x, y) = (decompose(a, i)?, decompose(b, i)?);
                *t = ProductTerm::new(
                    x.negative != y.negative,
                    ((x.significand * y.significand) << mode.product_shift()) as u16,
                    (x.exponent + y.exponent) as u8,
                );
            }
        }
    }
    Ok(terms)
}

/// Architectural state of one MAC unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacState {
    pub mode: PrecisionMode,
    pub variant: TreeVariant,
    pub accumulator: AccumulatorValue,
    pub cycles: u64,
}

impl MacState {
    pub fn new(mode: PrecisionMode, variant: TreeVariant, acc_mantissa_bits: u32) -> Self {
        MacState {
            mode,
            variant,
            accumulator: AccumulatorValue::zero(acc_mantissa_bits),
            cycles: 0,
        }
    }

    pub fn acc_mantissa_bits(&self) -> u32 {
        self.accumulator.mantissa_bits
    }

    pub fn tree_config(&self, shared_a: u8, shared_b: u8) -> TreeConfig {
        TreeConfig::new(self.variant, self.acc_mantissa_bits())
            .with_shared(shared_a, shared_b)
            .with_offset(self.mode.term_exponent_offset())
    }

    /// One MAC cycle: multiply `products_per_cycle` element pairs, reduce
    /// them into the accumulator.
    pub fn mac_cycle(&self, a: &[u8], b: &[u8], shared_a: u8, shared_b: u8) -> Result<MacState> {
        if shared_a == SCALE_NAN || shared_b == SCALE_NAN {
            return Err(MxError::NanScale);
        }
        let terms = cycle_terms(self.mode, a, b)?;
        Ok(self.step(&terms, shared_a, shared_b))
    }

    /// Reduces precomputed terms into the accumulator.
    pub fn step(&self, terms: &[ProductTerm; TERMS_PER_CYCLE], shared_a: u8, shared_b: u8) -> MacState {
        let cfg = self.tree_config(shared_a, shared_b);
        MacState {
            accumulator: reduce(terms, &self.accumulator, &cfg),
            cycles: self.cycles + 1,
            ..*self
        }
    }

    /// Folds a full 32-element dot product into the accumulator.
    pub fn mac_dot_block(&self, a: &MxBlock, b: &MxBlock) -> Result<MacState> {
        let f = self.mode.format();
        for blk in [a, b] {
            if blk.format != f {
                return Err(MxError::FormatMismatch {
                    expected: f.to_string(),
                    got: blk.format.to_string(),
                });
            }
        }
        let n = self.mode.products_per_cycle();
        let mut state = *self;
        for (ca, cb) in a.elements.chunks(n).zip(b.elements.chunks(n)) {
            state = state
                .mac_cycle(ca, cb, a.shared_exponent, b.shared_exponent)
                .map_err(|e| match e {
                    // Report positions within the block rather than the cycle.
                    MxError::NonFiniteElement { position, code } => MxError::NonFiniteElement {
                        position: (state.cycles - self.cycles) as usize * n + position,
                        code,
                    },
                    e => e,
                })?;
        }
        Ok(state)
    }
}

/// Quantizes 64 accumulator outputs (one 8x8 group) with a single shared
/// exponent, emitted as two MX blocks carrying the same scale.
pub fn quantize_group(outputs: &[AccumulatorValue], spec: &FormatSpec) -> Result<[MxBlock; 2]> {
    if outputs.len() != GROUP_SIZE {
        return Err(MxError::ElementCount {
            expected: GROUP_SIZE,
            got: outputs.len(),
        });
    }
    if outputs.iter().any(|o| o.saturated) {
        return Err(MxError::Saturated);
    }
    let values: Vec<f64> = outputs.iter().map(AccumulatorValue::to_f64).collect();
    group_blocks(&values, spec)
}

/// [`quantize_group`] for FP64 inputs.
pub fn group_blocks(values: &[f64], spec: &FormatSpec) -> Result<[MxBlock; 2]> {
    let (shared, codes) = quantize_group_values(values, spec)?;
    let mut blocks = [MxBlock::zero(spec.name); 2];
    for (blk, chunk) in blocks.iter_mut().zip(codes.chunks(BLOCK_SIZE)) {
        blk.shared_exponent = shared;
        blk.elements.copy_from_slice(chunk);
    }
    Ok(blocks)
}

/// MX GeMM on the MAC model: `a` is M x K and `bt` is N x K (both blocked
/// along K). Each output runs its own accumulation sequence over K in
/// `products_per_cycle` steps. Returns the M x N accumulator values.
pub fn gemm_mx(
    a: &MxMatrix,
    bt: &MxMatrix,
    variant: TreeVariant,
    acc_mantissa_bits: u32,
) -> Result<Vec<AccumulatorValue>> {
    if a.cols != bt.cols {
        return Err(MxError::Dimension(format!(
            "inner dimensions differ: {} vs {}",
            a.cols, bt.cols
        )));
    }
    if a.format != bt.format {
        return Err(MxError::FormatMismatch {
            expected: a.format.to_string(),
            got: bt.format.to_string(),
        });
    }
    let mode = PrecisionMode::from_format(a.format);
    let bpr = MxMatrix::blocks_per_row(a.cols);
    let mut out = Vec::with_capacity(a.rows * bt.rows);
    for i in 0..a.rows {
        for j in 0..bt.rows {
            let mut st = MacState::new(mode, variant, acc_mantissa_bits);
            for k in 0..bpr {
                st = st.mac_dot_block(a.block(i, k), bt.block(j, k))?;
            }
            out.push(st.accumulator);
        }
    }
    Ok(out)
}

#[cfg(test)]
#[allow(clippy::unusual_byte_groupings)]
mod tests {
    use super::*;
    use crate::block::decode_block;
    use crate::format::{FP4_E2M1, FP8_E4M3, FP8_E5M2};

    #[test]
    fn products_per_cycle() {
        assert_eq!(PrecisionMode::MxInt8.products_per_cycle(), 1);
        assert_eq!(PrecisionMode::MxFp6E2M3.products_per_cycle(), 4);
        assert_eq!(PrecisionMode::MxFp4E2M1.products_per_cycle(), 8);
    }

    #[test]
    fn int8_identity() {
        let st = MacState::new(PrecisionMode::MxInt8, TreeVariant::HybridIter2, 16);
        let st = st.mac_cycle(&[64], &[64], 127, 127).unwrap();
        assert_eq!(st.accumulator.to_f64(), 1.0);
        assert_eq!(st.cycles, 1);
    }

    #[test]
    fn int8_extremes_exact() {
        let st = MacState::new(PrecisionMode::MxInt8, TreeVariant::LongInteger, 23);
        let st = st.mac_cycle(&[0x80], &[0x80], 127, 127).unwrap();
        assert_eq!(st.accumulator.to_f64(), 4.0);
        let st = st.mac_cycle(&[0x81], &[0x7f], 127, 127).unwrap();
        assert_eq!(st.accumulator.to_f64(), 4.0 - (127.0 * 127.0) / 4096.0);
    }

    #[test]
    fn fp4_eight_ones() {
        let one = FP4_E2M1.encode(1.0);
        for v in TreeVariant::ALL {
            let st = MacState::new(PrecisionMode::MxFp4E2M1, v, 23);
            let st = st.mac_cycle(&[one; 8], &[one; 8], 127, 127).unwrap();
            assert_eq!(st.accumulator.to_f64(), 8.0, "{v}");
        }
    }

    #[test]
    fn zero_operands_leave_accumulator() {
        for mode in PrecisionMode::ALL {
            let n = mode.products_per_cycle();
            let st = MacState::new(mode, TreeVariant::HybridIter2, 10);
            let st2 = st.mac_cycle(&vec![0; n], &vec![0; n], 127, 127).unwrap();
            assert!(st2.accumulator.zero, "{mode}");
        }
    }

    #[test]
    fn e5m2_nan_rejected_with_position() {
        let st = MacState::new(PrecisionMode::MxFp8E5M2, TreeVariant::HybridIter2, 16);
        let one = FP8_E5M2.encode(1.0);
        let err = st.mac_cycle(&[one, one, 0b0_11111_01, one], &[one; 4], 127, 127);
        assert!(matches!(err, Err(MxError::NonFiniteElement { position: 2, .. })));
    }

    #[test]
    fn nan_scale_rejected() {
        let st = MacState::new(PrecisionMode::MxFp8E4M3, TreeVariant::HybridIter2, 16);
        assert!(matches!(st.mac_cycle(&[0; 4], &[0; 4], 255, 127), Err(MxError::NanScale)));
    }

    #[test]
    fn orthogonal_one_hot_blocks() {
        let mut a = MxBlock::zero(ElementFormat::Fp8E4M3);
        let mut b = a;
        a.shared_exponent = 127;
        b.shared_exponent = 127;
        a.elements[3] = FP8_E4M3.encode(1.0);
        b.elements[17] = FP8_E4M3.encode(1.0);
        let st = MacState::new(PrecisionMode::MxFp8E4M3, TreeVariant::HybridIter2, 16);
        assert_eq!(st.mac_dot_block(&a, &b).unwrap().accumulator.to_f64(), 0.0);
    }

    #[test]
    fn all_ones_blocks() {
        for mode in PrecisionMode::ALL {
            let spec = mode.spec();
            let mut a = MxBlock::zero(mode.format());
            a.elements = [spec.encode(1.0); 32];
            a.shared_exponent = 129;
            let mut b = a;
            b.shared_exponent = 124;
            let da = decode_block(&a).unwrap();
            let db = decode_block(&b).unwrap();
            let oracle: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
            assert_eq!(oracle, 32.0 * 0.5);
            let st = MacState::new(mode, TreeVariant::HybridIter2, 16);
            let st = st.mac_dot_block(&a, &b).unwrap();
            assert_eq!(st.accumulator.to_f64(), oracle, "{mode}");
            assert_eq!(st.cycles as usize, 32 / mode.products_per_cycle());
        }
    }

    #[test]
    fn quantize_group_constant() {
        let outs = [AccumulatorValue::from_f64(1024.0, 23); 64];
        let blocks = quantize_group(&outs, &FP8_E4M3).unwrap();
        for b in &blocks {
            assert_eq!(b.shared_exponent, 129);
            assert!(b.elements.iter().all(|&c| FP8_E4M3.decode(c) == 256.0));
        }
    }

    #[test]
    fn quantize_group_zero_and_saturation() {
        let outs = [AccumulatorValue::zero(16); 64];
        let blocks = quantize_group(&outs, &FP8_E4M3).unwrap();
        assert!(blocks.iter().all(|b| b.shared_exponent == 0 && b.elements == [0; 32]));
        let mut outs = outs;
        outs[9].saturated = true;
        assert!(matches!(quantize_group(&outs, &FP8_E4M3), Err(MxError::Saturated)));
    }

    #[test]
    fn quantize_group_max_at_front() {
        let mut vals = [0.0f64; 64];
        vals[0] = -300.0;
        for (i, v) in vals.iter_mut().enumerate().skip(1) {
            *v = (i as f64).sin() * 40.0;
        }
        let blocks = group_blocks(&vals, &FP8_E4M3).unwrap();
        // floor(log2 300) - 8 = 0 -> code 127 in both blocks.
        assert_eq!(blocks[0].shared_exponent, 127);
        assert_eq!(blocks[1].shared_exponent, 127);
        let dec: Vec<f64> = blocks.iter().flat_map(|b| decode_block(b).unwrap()).collect();
        for (x, y) in vals.iter().zip(&dec) {
            assert_eq!(*y, FP8_E4M3.decode(FP8_E4M3.encode(*x)));
        }
    }
}
