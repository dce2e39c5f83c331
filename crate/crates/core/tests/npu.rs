use std::path::PathBuf;

use mxdp::npu::{
    report_csv, simulate_functional, simulate_gemm, trace_csv, CsrFile, SimOptions, StreamerConfig, WorkloadSpec,
    DRAIN_CYCLES, FILL_CYCLES, LAUNCH_LATENCY, QUANT_CYCLES_PER_GROUP,
};
use mxdp::{gemm_mx, quantize_group, MxMatrix, PrecisionMode, RealMatrix, TreeVariant};

fn workload(name: &str) -> WorkloadSpec {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../workloads").join(name);
    WorkloadSpec::load(&p).unwrap()
}

fn run(w: &WorkloadSpec) -> mxdp::npu::SimReport {
    simulate_gemm(w, &StreamerConfig::default(), w.freq_mhz, &SimOptions::default()).unwrap()
}

#[test]
fn shipped_workloads_parse_and_stay_efficient() {
    for (name, mode) in [
        ("resnet18_inference_int8.json", PrecisionMode::MxInt8),
        ("resnet18_training_fp8.json", PrecisionMode::MxFp8E4M3),
        ("vit_b16_inference_int8.json", PrecisionMode::MxInt8),
        ("vit_b16_training_fp8.json", PrecisionMode::MxFp8E4M3),
    ] {
        let w = workload(name);
        assert!(w.layers.iter().all(|l| l.mode == mode), "{name}");
        let r = run(&w);
        assert!(r.utilization >= 0.9 && r.utilization <= 1.0, "{name}: {}", r.utilization);
        let peak = mxdp::npu::peak_throughput(mode, 500.0);
        assert!(r.achieved_gops <= peak && r.achieved_gops >= 0.9 * peak);
    }
}

#[test]
fn hand_computed_single_tile() {
    // One 8x8x8 INT8 tile: 8 compute cycles, 8 cycles of operand supply on
    // one channel, 2 cycles of scales. Config 3 + 10, fill 8, drain 8,
    // one quantization group.
    let r = run(&WorkloadSpec::single("t", 8, 8, 8, PrecisionMode::MxInt8));
    let l = &r.layers[0];
    assert_eq!((l.ideal_cycles, l.compute_cycles, l.supply_cycles), (8, 8, 8));
    assert_eq!(l.config_cycles, 3 + LAUNCH_LATENCY);
    assert_eq!(l.total_cycles, 8 + 13 + FILL_CYCLES + DRAIN_CYCLES + QUANT_CYCLES_PER_GROUP);
    assert_eq!(l.active_channels, 1);
}

#[test]
fn padding_counts_whole_tiles() {
    let a = run(&WorkloadSpec::single("a", 9, 8, 8, PrecisionMode::MxFp8E4M3));
    let b = run(&WorkloadSpec::single("b", 16, 8, 8, PrecisionMode::MxFp8E4M3));
    assert_eq!(a.total_cycles, b.total_cycles);
    assert_eq!(a.layers[0].tiles, 2);
}

#[test]
fn batch_multiplies_rows() {
    let mut w = WorkloadSpec::single("x", 49, 512, 64, PrecisionMode::MxInt8);
    w.batch = 32;
    let r = run(&w);
    assert_eq!(r.layers[0].m, 49 * 32);
    assert_eq!(r.layers[0].m_tiles, (49 * 32usize).div_ceil(8) as u64);
}

#[test]
fn fewer_channels_slow_fp8_down() {
    let w = WorkloadSpec::single("x", 256, 256, 256, PrecisionMode::MxFp8E4M3);
    let full = simulate_gemm(&w, &StreamerConfig::with_channels(4), 500.0, &SimOptions::default()).unwrap();
    let half = simulate_gemm(&w, &StreamerConfig::with_channels(2), 500.0, &SimOptions::default()).unwrap();
    assert!(!full.layers[0].bandwidth_limited);
    assert!(half.layers[0].bandwidth_limited);
    assert!(half.utilization < 0.55 * full.utilization);
    assert_eq!(half.layers[0].supply_cycles, 2 * full.layers[0].supply_cycles);
}

#[test]
fn gated_channels_stay_idle() {
    let w = WorkloadSpec::single("x", 64, 64, 64, PrecisionMode::MxFp6E3M2);
    let r = run(&w);
    let l = &r.layers[0];
    assert_eq!(l.active_channels, 3);
    let idle: Vec<_> = l.channels.iter().filter(|c| !c.active).collect();
    assert_eq!(idle.len(), 2);
    assert!(idle.iter().all(|c| c.busy_cycles == 0));
}

#[test]
fn csr_rejects_bad_writes() {
    let mut c = CsrFile::default();
    assert!(c.write(0, 99).is_err());
    assert!(c.write(1, 0).is_err());
    assert!(c.write(2, 12).is_err());
    assert!(c.write(7, 1).is_err());
    assert!(c.write(2, 64).is_ok());
}

#[test]
fn trace_and_csv_outputs() {
    let mut w = WorkloadSpec::single("first", 16, 16, 16, PrecisionMode::MxInt8);
    w.layers.push(WorkloadSpec::single("second", 8, 8, 8, PrecisionMode::MxFp4E2M1).layers[0].clone());
    let r = simulate_gemm(&w, &StreamerConfig::default(), 500.0, &SimOptions { trace: true }).unwrap();
    let t = trace_csv(&r.trace);
    assert!(t.starts_with("cycle,unit,event\n"));
    assert!(t.contains("done second"));
    let cycles: Vec<u64> = r.trace.iter().map(|e| e.cycle).collect();
    assert!(cycles.windows(2).all(|p| p[0] <= p[1]));
    assert_eq!(*cycles.last().unwrap(), r.total_cycles);
    let csv = report_csv(&r);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().last().unwrap().starts_with("TOTAL,"));
}

#[test]
fn functional_run_quantizes_groups_of_the_mac_outputs() {
    let vals: Vec<f64> = (0..20 * 40).map(|i| ((i * 7919) % 211) as f64 / 17.0 - 6.0).collect();
    let a = MxMatrix::from_real(&RealMatrix::new(20, 40, vals.clone()).unwrap(), PrecisionMode::MxFp6E2M3.spec()).unwrap();
    let bt = MxMatrix::from_real(&RealMatrix::new(12, 40, vals[..480].to_vec()).unwrap(), PrecisionMode::MxFp6E2M3.spec())
        .unwrap();
    let f = simulate_functional(&a, &bt, TreeVariant::HybridIter2, 16, &StreamerConfig::default(), 500.0).unwrap();
    let direct = gemm_mx(&a, &bt, TreeVariant::HybridIter2, 16).unwrap();
    assert_eq!(f.outputs, direct);
    // 3 x 2 groups; the first group is rows 0..8, columns 0..8.
    assert_eq!(f.groups.len(), 6);
    let first: Vec<_> = (0..64).map(|i| direct[(i / 8) * 12 + i % 8]).collect();
    assert_eq!(f.groups[0], quantize_group(&first, PrecisionMode::MxFp6E2M3.spec()).unwrap());
    assert_eq!(f.report.tiles, 3 * 2 * 5);
}
