//! Bit-accurate emulation of precision-scalable microscaling (MX)
//! multiply-accumulate datapaths.
//!
//! - [`format`] and [`block`]: the six MX element formats, 32-element blocks
//!   with an E8M0 shared scale, and quantization.
//! - [`tree`]: the FP32-addition, long-integer and hybrid reduction trees,
//!   parametric in accumulator mantissa width, plus a width report.
//! - [`mac`]: the MAC unit built on top of the trees.
//! - [`lab`]: accumulation-error versus quantization-error sweeps.
//! - [`npu`]: cycle model of an 8x8 MX tensor core behind CSRs and gated
//!   data streamers.
//! - [`tensor_file`]: the binary tensor container used by the CLI.

pub mod block;
pub mod error;
pub mod format;
pub mod lab;
pub mod mac;
pub mod matrix;
pub mod npu;
pub mod tensor_file;
pub mod tree;

pub use block::{decode_block, quantize_to_mx, MxBlock, MxMatrix, BLOCK_SIZE};
pub use error::{MxError, Result};
pub use format::{decode_element, encode_element, ElementFormat, FormatSpec};
pub use mac::{gemm_mx, quantize_group, MacState, PrecisionMode};
pub use matrix::{gemm_fp64, RealMatrix};
pub use tree::{cost_report, AccumulatorValue, CostReport, ProductTerm, TreeConfig, TreeVariant};
