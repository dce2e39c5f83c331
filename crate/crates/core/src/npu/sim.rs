use crate::block::{MxBlock, MxMatrix, BLOCK_SIZE};
use crate::error::{MxError, Result};
use crate::mac::{quantize_group, MacState, PrecisionMode, GROUP_SIZE};
use crate::tree::{AccumulatorValue, TreeVariant};

use super::report::{ChannelCounter, LayerReport, SimReport, TraceEvent};
use super::{peak_throughput, tile_cycles, CsrFile, StreamerConfig, WorkloadSpec, ARRAY_DIM, MAC_COUNT};

/// Array pipeline fill, once per layer.
pub const FILL_CYCLES: u64 = 8;
/// Array pipeline drain, once per layer.
pub const DRAIN_CYCLES: u64 = 8;
/// SIMD quantization of one 8x8 output group. The unit runs beside the
/// array, so only the last group of a layer adds to the total.
pub const QUANT_CYCLES_PER_GROUP: u64 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Record a phase-level event trace.
    pub trace: bool,
}

fn tiles(x: usize) -> u64 {
    x.div_ceil(ARRAY_DIM) as u64
}

/// Timing of one layer starting at `start`, with the CSR file left by the
/// previous layer.
#[allow(clippy::too_many_arguments)]
fn layer_timing(
    label: &str,
    dims: (usize, usize, usize),
    mode: PrecisionMode,
    csr: &mut CsrFile,
    streamers: &StreamerConfig,
    freq_mhz: f64,
    start: u64,
    trace: Option<&mut Vec<TraceEvent>>,
) -> Result<LayerReport> {
    let (m, k, n) = dims;
    let (tm, tk, tn) = (tiles(m), tiles(k), tiles(n));
    let tile_count = tm * tn * tk;
    let tc = tile_cycles(mode);

    let writes = CsrFile::writes_for(mode, tk as u32, (tn as usize * ARRAY_DIM) as u32);
    let (next, config_cycles) = csr.configure(&writes)?;
    *csr = next;

    let ideal = tile_count * tc;
    let compute = ideal;

    let elem_bits = mode.spec().total_bits as u64;
    let operand_bits = tile_count * MAC_COUNT as u64 * elem_bits;
    let active = streamers.active_channels(mode);
    if active == 0 || streamers.channel_width_bits == 0 {
        return Err(MxError::Workload("streamer has no usable channel".into()));
    }
    let operand_supply = operand_bits.div_ceil(streamers.operand_bandwidth(mode));
    // One 8-bit scale per row and 32-element block, re-streamed per output tile.
    let blocks = k.div_ceil(BLOCK_SIZE) as u64;
    let scale_bits = 2 * tm * tn * ARRAY_DIM as u64 * blocks * 8;
    let scale_bw = streamers.scale_channels.max(1) as u64 * streamers.channel_width_bits as u64;
    let scale_supply = scale_bits.div_ceil(scale_bw);
    let supply = operand_supply.max(scale_supply);

    let pipeline = FILL_CYCLES + DRAIN_CYCLES;
    let quant_busy = tm * tn * QUANT_CYCLES_PER_GROUP;
    // A group takes at least one array cycle, so the unit never backs up.
    let quant = QUANT_CYCLES_PER_GROUP;
    let total = compute.max(supply) + config_cycles + pipeline + quant;

    let mut channels = Vec::new();
    for stream in ["a", "b"] {
        for c in 0..streamers.channels {
            let on = c < active;
            channels.push(ChannelCounter {
                stream: stream.to_string(),
                channel: c,
                active: on,
                busy_cycles: if on { operand_supply } else { 0 },
            });
        }
    }
    for c in 0..streamers.scale_channels.max(1) {
        channels.push(ChannelCounter {
            stream: "scale".to_string(),
            channel: c,
            active: true,
            busy_cycles: scale_supply,
        });
    }

    if let Some(events) = trace {
        let mut t = start;
        for (i, v) in writes {
            events.push(TraceEvent::new(t, "csr", format!("write csr{i}={v}")));
            t += 1;
        }
        events.push(TraceEvent::new(t, "csr", "launch".into()));
        t = start + config_cycles;
        events.push(TraceEvent::new(t, "array", format!("fill {label}")));
        let body = t + FILL_CYCLES;
        for ch in &channels {
            if ch.active {
                events.push(TraceEvent::new(
                    body,
                    &format!("stream_{}.ch{}", ch.stream, ch.channel),
                    format!("busy {} cycles", ch.busy_cycles),
                ));
            }
        }
        events.push(TraceEvent::new(body, "array", format!("compute {tile_count} tiles, {compute} cycles")));
        let after = body + compute.max(supply);
        events.push(TraceEvent::new(after, "array", "drain".into()));
        events.push(TraceEvent::new(after + DRAIN_CYCLES, "quant", format!("{} groups", tm * tn)));
        events.push(TraceEvent::new(start + total, "array", format!("done {label}")));
    }

    let peak = peak_throughput(mode, freq_mhz);
    let utilization = ideal as f64 / total as f64;
    Ok(LayerReport {
        label: label.to_string(),
        mode,
        m,
        k,
        n,
        m_tiles: tm,
        n_tiles: tn,
        k_tiles: tk,
        tiles: tile_count,
        ideal_cycles: ideal,
        compute_cycles: compute,
        supply_cycles: supply,
        config_cycles,
        pipeline_cycles: pipeline,
        quant_cycles: quant,
        quant_busy_cycles: quant_busy,
        total_cycles: total,
        utilization,
        peak_gops: peak,
        achieved_gops: peak * utilization,
        bandwidth_limited: supply > compute,
        active_channels: active,
        channels,
    })
}

/// Cycle model of a workload. Every layer is configured through the CSRs,
/// streamed, computed and quantized in sequence; layers do not overlap.
pub fn simulate_gemm(
    workload: &WorkloadSpec,
    streamers: &StreamerConfig,
    freq_mhz: f64,
    opts: &SimOptions,
) -> Result<SimReport> {
    workload.validate()?;
    if !(freq_mhz > 0.0 && freq_mhz.is_finite()) {
        return Err(MxError::Workload(format!("frequency {freq_mhz} MHz is not positive")));
    }
    let mut csr = CsrFile::default();
    let mut trace = Vec::new();
    let mut layers = Vec::with_capacity(workload.layers.len());
    let mut now = 0;
    for l in &workload.layers {
        let r = layer_timing(
            &l.label,
            (l.m * workload.batch, l.k, l.n),
            l.mode,
            &mut csr,
            streamers,
            freq_mhz,
            now,
            opts.trace.then_some(&mut trace),
        )?;
        now += r.total_cycles;
        layers.push(r);
    }
    Ok(SimReport::new(layers, workload.batch, freq_mhz, trace))
}

/// Outputs of a functionally simulated layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalResult {
    /// Row-major M x N accumulator values.
    pub outputs: Vec<AccumulatorValue>,
    /// Quantized 8x8 output groups in tile order (row tiles outer).
    pub groups: Vec<[MxBlock; 2]>,
    pub report: LayerReport,
}

/// Runs one GeMM on the array: `a` is M x K, `bt` is N x K. Each PE owns
/// one MAC and walks the K tiles of its output; finished 8x8 groups go
/// through the quantization stage. Padding rows and columns are zero.
pub fn simulate_functional(
    a: &MxMatrix,
    bt: &MxMatrix,
    variant: TreeVariant,
    acc_mantissa_bits: u32,
    streamers: &StreamerConfig,
    freq_mhz: f64,
) -> Result<FunctionalResult> {
    if a.cols != bt.cols {
        return Err(MxError::Dimension(format!("inner dimensions differ: {} vs {}", a.cols, bt.cols)));
    }
    if a.format != bt.format {
        return Err(MxError::FormatMismatch {
            expected: a.format.to_string(),
            got: bt.format.to_string(),
        });
    }
    if a.rows == 0 || bt.rows == 0 || a.cols == 0 {
        return Err(MxError::Workload("zero-dimension layer".into()));
    }
    let mode = PrecisionMode::from_format(a.format);
    let ppc = mode.products_per_cycle();
    let (m, n, k) = (a.rows, bt.rows, a.cols);
    let (tm, tn, tk) = (tiles(m) as usize, tiles(n) as usize, tiles(k) as usize);
    let fetch = |mat: &MxMatrix, row: usize, col: usize| -> (u8, u8) {
        if row < mat.rows {
            mat.element(row, col)
        } else {
            (0, 0)
        }
    };

    let mut outputs = vec![AccumulatorValue::zero(acc_mantissa_bits); m * n];
    let mut groups = Vec::with_capacity(tm * tn);
    let mut ea = vec![0u8; ppc];
    let mut eb = vec![0u8; ppc];
    for ti in 0..tm {
        for tj in 0..tn {
            let mut pes = [MacState::new(mode, variant, acc_mantissa_bits); MAC_COUNT];
            for kt in 0..tk {
                for step in 0..ARRAY_DIM / ppc {
                    let k0 = kt * ARRAY_DIM + step * ppc;
                    for (p, pe) in pes.iter_mut().enumerate() {
                        let (r, c) = (ti * ARRAY_DIM + p / ARRAY_DIM, tj * ARRAY_DIM + p % ARRAY_DIM);
                        let mut sa = 0;
                        let mut sb = 0;
                        for e in 0..ppc {
                            (ea[e], sa) = fetch(a, r, k0 + e);
                            (eb[e], sb) = fetch(bt, c, k0 + e);
                        }
                        *pe = pe.mac_cycle(&ea, &eb, sa, sb)?;
                    }
                }
            }
            let accs: Vec<AccumulatorValue> = pes.iter().map(|s| s.accumulator).collect();
            debug_assert_eq!(accs.len(), GROUP_SIZE);
            for (p, acc) in accs.iter().enumerate() {
                let (r, c) = (ti * ARRAY_DIM + p / ARRAY_DIM, tj * ARRAY_DIM + p % ARRAY_DIM);
                if r < m && c < n {
                    outputs[r * n + c] = *acc;
                }
            }
            groups.push(quantize_group(&accs, mode.spec())?);
        }
    }
    let mut csr = CsrFile::default();
    let report = layer_timing("functional", (m, k, n), mode, &mut csr, streamers, freq_mhz, 0, None)?;
    Ok(FunctionalResult {
        outputs,
        groups,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::npu::LAUNCH_LATENCY;

    fn run(m: usize, k: usize, n: usize, mode: PrecisionMode) -> SimReport {
        simulate_gemm(
            &WorkloadSpec::single("t", m, k, n, mode),
            &StreamerConfig::default(),
            500.0,
            &SimOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn single_fp4_tile() {
        let r = run(8, 8, 8, PrecisionMode::MxFp4E2M1);
        let l = &r.layers[0];
        assert_eq!(l.compute_cycles, 1);
        // 16 scale bytes over one 64-bit scale channel outlast the tile.
        assert_eq!(l.supply_cycles, 2);
        assert_eq!(l.total_cycles, 2 + 3 + LAUNCH_LATENCY + FILL_CYCLES + DRAIN_CYCLES + 1);
        assert!(l.utilization < 1.0);
    }

    #[test]
    fn padding_is_charged() {
        let a = run(9, 8, 8, PrecisionMode::MxInt8);
        assert_eq!(a.layers[0].tiles, 2);
    }

    #[test]
    fn starved_streamer_reported() {
        let r = simulate_gemm(
            &WorkloadSpec::single("t", 64, 256, 64, PrecisionMode::MxFp8E4M3),
            &StreamerConfig::with_channels(1),
            500.0,
            &SimOptions::default(),
        )
        .unwrap();
        let l = &r.layers[0];
        assert!(l.bandwidth_limited);
        assert_eq!(l.supply_cycles, 4 * l.compute_cycles);
    }

    #[test]
    fn trace_has_launch_and_done() {
        let r = simulate_gemm(
            &WorkloadSpec::single("t", 16, 16, 16, PrecisionMode::MxFp6E3M2),
            &StreamerConfig::default(),
            500.0,
            &SimOptions { trace: true },
        )
        .unwrap();
        assert!(r.trace.iter().any(|e| e.event == "launch"));
        assert_eq!(r.trace.last().unwrap().cycle, r.total_cycles);
        assert!(!r.trace.iter().any(|e| e.unit == "stream_a.ch3"));
    }
}
