//! Cycle-level model of an 8x8 MX tensor core: CSR programming, the
//! spatial array, the output quantization stage and precision-gated data
//! streamers feeding it from a banked scratchpad.

mod csr;
mod report;
mod sim;
mod streamer;
mod workload;

pub use csr::{CsrFile, CSR_COUNT, LAUNCH_LATENCY};
pub use report::{report_csv, trace_csv, ChannelCounter, LayerReport, SimReport, TraceEvent};
pub use sim::{simulate_functional, simulate_gemm, FunctionalResult, SimOptions, FILL_CYCLES, DRAIN_CYCLES, QUANT_CYCLES_PER_GROUP};
pub use streamer::{AddressGenerator, StreamerConfig, CHANNEL_WIDTH_BITS, MAX_CHANNELS};
pub use workload::{LayerSpec, WorkloadSpec};

use crate::mac::PrecisionMode;

/// Rows and columns of the MAC array; also the tile edge.
pub const ARRAY_DIM: usize = 8;
pub const MAC_COUNT: usize = ARRAY_DIM * ARRAY_DIM;

/// Cycles for one 8x8x8 tile GeMM.
pub fn tile_cycles(mode: PrecisionMode) -> u64 {
    (ARRAY_DIM / mode.products_per_cycle()) as u64
}

/// Operations per MAC per cycle, counting each multiply and each add.
pub fn ops_per_cycle(mode: PrecisionMode) -> u64 {
    2 * mode.products_per_cycle() as u64
}

/// Peak throughput of the array in GOPS.
pub fn peak_throughput(mode: PrecisionMode, freq_mhz: f64) -> f64 {
    assert!(freq_mhz > 0.0, "frequency must be positive");
    MAC_COUNT as f64 * ops_per_cycle(mode) as f64 * freq_mhz / 1000.0
}

/// Streamer channels a mode needs per operand.
///
/// One tile step moves 64 elements per operand in `tile_cycles` cycles, so
/// the demand is `64 * bits / tile_cycles` bits per cycle over 64-bit
/// channels: 1 for INT8, 4 for FP8, 3 for FP6 and 4 for FP4.
pub fn channel_activity(mode: PrecisionMode) -> u32 {
    let bits = mode.spec().total_bits as u64 * MAC_COUNT as u64;
    bits.div_ceil(tile_cycles(mode) * CHANNEL_WIDTH_BITS as u64) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_cycles_per_mode() {
        let c: Vec<u64> = PrecisionMode::ALL.iter().map(|&m| tile_cycles(m)).collect();
        assert_eq!(c, [8, 2, 2, 2, 2, 1]);
    }

    #[test]
    fn peak_at_500() {
        let g: Vec<f64> = PrecisionMode::ALL.iter().map(|&m| peak_throughput(m, 500.0)).collect();
        assert_eq!(g, [64.0, 256.0, 256.0, 256.0, 256.0, 512.0]);
    }

    #[test]
    fn channels_per_mode() {
        let c: Vec<u32> = PrecisionMode::ALL.iter().map(|&m| channel_activity(m)).collect();
        assert_eq!(c, [1, 4, 4, 3, 3, 4]);
    }
}
