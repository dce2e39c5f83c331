use serde::Serialize;

use super::{TreeConfig, TreeVariant};

/// Structural datapath widths in bits. A qualitative cost proxy only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub variant: TreeVariant,
    pub acc_mantissa_bits: u32,
    pub significand_bits: u32,
    /// Level-2 alignment shifter (the extended significand field).
    pub l2_shifter_width: u32,
    /// Level-2 adder output, i.e. the product-sum.
    pub l2_adder_width: u32,
    /// Shifter that aligns the stored partial result.
    pub accumulator_alignment_width: u32,
    pub accumulation_adder_width: u32,
    /// Input of the widest normalizer.
    pub normalization_input_width: u32,
    pub normalizer_count: u32,
    pub mux_bits: u32,
}

/// Closed-form widths as functions of `S = M_acc + 1`.
///
/// The FP32-addition and hybrid trees share `W = S + 2` and `P = S + 4`.
/// Iteration 1 normalizes `3S + 5` bits; iteration 2 selects one `S`-bit
/// extension through a `P + S` bit MUX, so adder and normalizer shrink to
/// `2S + 5`. The long-integer tree is reported with its published widths:
/// a 67-bit anchored integer whose `69`-bit sum is extended by `S + 2`.
pub fn cost_report(cfg: &TreeConfig) -> CostReport {
    let s = cfg.significand_bits();
    let w = s + 2;
    let p = s + 4;
    let base = CostReport {
        variant: cfg.variant,
        acc_mantissa_bits: cfg.acc_mantissa_bits,
        significand_bits: s,
        l2_shifter_width: w,
        l2_adder_width: p,
        accumulator_alignment_width: 0,
        accumulation_adder_width: 0,
        normalization_input_width: 0,
        normalizer_count: 1,
        mux_bits: 0,
    };
    match cfg.variant {
        TreeVariant::Fp32Addition => CostReport {
            accumulator_alignment_width: s + 3,
            accumulation_adder_width: s + 4,
            normalization_input_width: p,
            normalizer_count: 2,
            ..base
        },
        TreeVariant::LongInteger => {
            let product_sum = 67 + 2 + s + 2;
            CostReport {
                l2_shifter_width: 67,
                l2_adder_width: 67,
                accumulator_alignment_width: product_sum,
                accumulation_adder_width: product_sum,
                normalization_input_width: product_sum + 1,
                ..base
            }
        }
        TreeVariant::HybridIter1 => CostReport {
            accumulator_alignment_width: p + 2 * s,
            accumulation_adder_width: 2 * s + 5,
            normalization_input_width: 3 * s + 5,
            ..base
        },
        TreeVariant::HybridIter2 => CostReport {
            accumulator_alignment_width: p + s,
            accumulation_adder_width: 2 * s + 5,
            normalization_input_width: 2 * s + 5,
            mux_bits: p + s,
            ..base
        },
    }
}
