//! MX blocks: 32 element codes sharing one E8M0 scale.

use crate::error::{MxError, Result};
use crate::format::{floor_log2, pow2, ElementFormat, FormatSpec};
use crate::matrix::RealMatrix;

pub const BLOCK_SIZE: usize = 32;

/// E8M0 code reserved for NaN.
pub const SCALE_NAN: u8 = 255;
const SCALE_BIAS: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MxBlock {
    pub format: ElementFormat,
    /// E8M0 code, value `2^(code - 127)`.
    pub shared_exponent: u8,
    pub elements: [u8; BLOCK_SIZE],
}

impl MxBlock {
    pub fn zero(format: ElementFormat) -> Self {
        MxBlock {
            format,
            shared_exponent: 0,
            elements: [0; BLOCK_SIZE],
        }
    }

    pub fn spec(&self) -> &'static FormatSpec {
        self.format.spec()
    }
}

/// Value of an E8M0 scale code. Code 255 yields NaN.
pub fn scale_value(code: u8) -> f64 {
    if code == SCALE_NAN {
        f64::NAN
    } else {
        pow2(code as i32 - SCALE_BIAS)
    }
}

/// Shared-exponent code for a group whose largest magnitude is `max_abs`:
/// `floor(log2(max_abs)) - emax + 127`, clamped to `0..=254`; zero maps to 0.
pub fn shared_exponent_for(max_abs: f64, spec: &FormatSpec) -> u8 {
    if max_abs == 0.0 {
        return 0;
    }
    let e = floor_log2(max_abs) - spec.max_normal_exponent + SCALE_BIAS;
    e.clamp(0, 254) as u8
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(MxError::NonFiniteInput { index }),
        None => Ok(()),
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Encodes `values` against an already chosen shared exponent code.
pub fn encode_with_scale(values: &[f64], spec: &FormatSpec, shared: u8) -> Vec<u8> {
    let inv = pow2(SCALE_BIAS - shared as i32);
    values.iter().map(|&v| spec.encode(v * inv)).collect()
}

/// Quantizes exactly 32 finite values into one MX block.
pub fn quantize_to_mx(values: &[f64], spec: &FormatSpec) -> Result<MxBlock> {
    if values.len() != BLOCK_SIZE {
        return Err(MxError::ElementCount {
            expected: BLOCK_SIZE,
            got: values.len(),
        });
    }
    check_finite(values)?;
    let shared = shared_exponent_for(max_abs(values), spec);
    let mut elements = [0u8; BLOCK_SIZE];
    elements.copy_from_slice(&encode_with_scale(values, spec, shared));
    Ok(MxBlock {
        format: spec.name,
        shared_exponent: shared,
        elements,
    })
}

/// Decodes a block into 32 FP64 values (element value times the scale).
pub fn decode_block(block: &MxBlock) -> Result<[f64; BLOCK_SIZE]> {
    if block.shared_exponent == SCALE_NAN {
        return Err(MxError::NanScale);
    }
    let spec = block.spec();
    let scale = scale_value(block.shared_exponent);
    let mut out = [0.0; BLOCK_SIZE];
    for (position, (o, &code)) in out.iter_mut().zip(&block.elements).enumerate() {
        if spec.is_special(code) {
            return Err(MxError::NonFiniteElement { position, code });
        }
        *o = spec.decode(code) * scale;
    }
    Ok(out)
}

/// Quantizes a group of any size with one shared exponent computed over the
/// whole group, returning the common code and the element codes.
pub fn quantize_group_values(values: &[f64], spec: &FormatSpec) -> Result<(u8, Vec<u8>)> {
    check_finite(values)?;
    let shared = shared_exponent_for(max_abs(values), spec);
    Ok((shared, encode_with_scale(values, spec, shared)))
}

/// A matrix stored as MX blocks along its rows: row `r` holds
/// `ceil(cols / 32)` blocks, the last one zero-padded.
///
/// GeMM operands use this layout for both sides, so the right-hand operand
/// is stored transposed (N x K) and blocks always run along K.
#[derive(Debug, Clone, PartialEq)]
pub struct MxMatrix {
    pub format: ElementFormat,
    pub rows: usize,
    pub cols: usize,
    pub blocks: Vec<MxBlock>,
}

impl MxMatrix {
    pub fn blocks_per_row(cols: usize) -> usize {
        cols.div_ceil(BLOCK_SIZE)
    }

    pub fn from_real(m: &RealMatrix, spec: &FormatSpec) -> Result<Self> {
        let bpr = Self::blocks_per_row(m.cols);
        let mut blocks = Vec::with_capacity(m.rows * bpr);
        let mut buf = [0.0f64; BLOCK_SIZE];
        for r in 0..m.rows {
            let row = m.row(r);
            for b in 0..bpr {
                buf.fill(0.0);
                let lo = b * BLOCK_SIZE;
                let hi = (lo + BLOCK_SIZE).min(m.cols);
                buf[..hi - lo].copy_from_slice(&row[lo..hi]);
                blocks.push(quantize_to_mx(&buf, spec).map_err(|e| match e {
                    MxError::NonFiniteInput { index } => MxError::NonFiniteInput {
                        index: r * m.cols + lo + index,
                    },
                    e => e,
                })?);
            }
        }
        Ok(MxMatrix {
            format: spec.name,
            rows: m.rows,
            cols: m.cols,
            blocks,
        })
    }

    pub fn to_real(&self) -> Result<RealMatrix> {
        let bpr = Self::blocks_per_row(self.cols);
        let mut values = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for b in 0..bpr {
                let dec = decode_block(&self.blocks[r * bpr + b])?;
                let n = (self.cols - b * BLOCK_SIZE).min(BLOCK_SIZE);
                values.extend_from_slice(&dec[..n]);
            }
        }
        RealMatrix::new(self.rows, self.cols, values)
    }

    pub fn block(&self, row: usize, block: usize) -> &MxBlock {
        &self.blocks[row * Self::blocks_per_row(self.cols) + block]
    }

    /// Element code and shared exponent code at `(row, col)`.
    pub fn element(&self, row: usize, col: usize) -> (u8, u8) {
        let b = self.block(row, col / BLOCK_SIZE);
        (b.elements[col % BLOCK_SIZE], b.shared_exponent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{FP4_E2M1, FP8_E4M3, INT8};

    #[test]
    fn all_zero_block() {
        let b = quantize_to_mx(&[0.0; 32], &FP8_E4M3).unwrap();
        assert_eq!(b.shared_exponent, 0);
        assert!(b.elements.iter().all(|&c| c == 0));
        assert_eq!(decode_block(&b).unwrap(), [0.0; 32]);
    }

    #[test]
    fn constant_1024_e4m3() {
        let b = quantize_to_mx(&[1024.0; 32], &FP8_E4M3).unwrap();
        assert_eq!(scale_value(b.shared_exponent), 4.0);
        for &c in &b.elements {
            assert_eq!(FP8_E4M3.decode(c), 256.0);
        }
        assert_eq!(decode_block(&b).unwrap(), [1024.0; 32]);
    }

    #[test]
    fn fp4_max_one_scale() {
        let mut v = [0.0; 32];
        for (i, x) in v.iter_mut().enumerate() {
            *x = (i as f64 / 31.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        v[7] = 1.0;
        let b = quantize_to_mx(&v, &FP4_E2M1).unwrap();
        assert_eq!(scale_value(b.shared_exponent), 0.25);
        let dec = decode_block(&b).unwrap();
        for (x, y) in v.iter().zip(dec) {
            // Largest FP4 spacing is 2.0 (between 4 and 6), i.e. 0.5 at this
            // scale; half of it bounds the rounding error.
            let ulp = if x.abs() / 0.25 >= 4.0 {
                2.0
            } else if x.abs() / 0.25 >= 2.0 {
                1.0
            } else {
                0.5
            };
            assert!((x - y).abs() <= 0.5 * ulp * 0.25 + 1e-15, "{x} vs {y}");
        }
    }

    #[test]
    fn nan_scale_rejected() {
        let mut b = MxBlock::zero(ElementFormat::Fp8E4M3);
        b.shared_exponent = SCALE_NAN;
        assert!(matches!(decode_block(&b), Err(MxError::NanScale)));
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut v = [1.0; 32];
        v[3] = f64::INFINITY;
        assert!(matches!(
            quantize_to_mx(&v, &INT8),
            Err(MxError::NonFiniteInput { index: 3 })
        ));
    }

    #[test]
    fn scale_clamps() {
        assert_eq!(shared_exponent_for(1e300, &FP8_E4M3), 254);
        assert_eq!(shared_exponent_for(1e-300, &FP8_E4M3), 0);
    }

    #[test]
    fn matrix_round_trip_with_padding() {
        let vals: Vec<f64> = (0..3 * 40).map(|i| (i % 7) as f64 - 3.0).collect();
        let m = RealMatrix::new(3, 40, vals.clone()).unwrap();
        let q = MxMatrix::from_real(&m, &INT8).unwrap();
        assert_eq!(q.blocks.len(), 6);
        assert_eq!(q.to_real().unwrap().values, vals);
    }
}
