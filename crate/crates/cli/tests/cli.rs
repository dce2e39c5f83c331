use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mxdp::tensor_file::{self, Tensor};
use mxdp::RealMatrix;
use serde_json::Value;

fn mxdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mxdp"))
        .args(args)
        .env_remove("MXDP_SEED")
        .output()
        .expect("run mxdp")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json stdout")
}

fn workload(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../workloads")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn save_real(path: &Path, rows: usize, cols: usize, f: impl Fn(usize) -> f64) {
    let m = RealMatrix::new(rows, cols, (0..rows * cols).map(f).collect()).unwrap();
    tensor_file::save(path, &Tensor::Real(m)).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn costs_report_the_published_widths() {
    let v = stdout_json(&mxdp(&["--json", "costs", "--macc", "23"]));
    assert_eq!(v["l2_shifter_width"], 26);
    assert_eq!(v["l2_adder_width"], 28);
    assert_eq!(v["normalization_input_width"], 53);
    let v = stdout_json(&mxdp(&["--json", "costs", "--variant", "hybrid_iter1", "--macc", "23"]));
    assert_eq!(v["normalization_input_width"], 77);
}

#[test]
fn every_run_prints_its_configuration() {
    let o = mxdp(&["costs"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("# mxdp costs {"), "{err}");
    assert!(err.contains("\"macc\":16") && err.contains("hybrid_iter2"));
}

#[test]
fn dot_matches_reference_for_exact_inputs() {
    let v = stdout_json(&mxdp(&["--json", "dot", "--a-values", "1,2,3", "--b-values", "0.5,-1,2"]));
    assert_eq!(v["value"], 4.5);
    assert_eq!(v["reference_fp64"], 4.5);
    let text = mxdp(&["dot", "--a-values", "1,2,3", "--b-values", "0.5,-1,2"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("value 4.5"));
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        &["costs", "--variant", "wallace"][..],
        &["costs", "--macc", "30"],
        &["sweep", "--format", "fp16"],
        &["frobnicate"],
    ] {
        assert_eq!(mxdp(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn io_errors_exit_with_two() {
    let o = mxdp(&["simulate", "--workload", "/nonexistent/workload.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed"));
}

#[test]
fn quantize_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, mx, back) = (dir.path().join("x.mxt"), dir.path().join("x.q.mxt"), dir.path().join("x.d.mxt"));
    save_real(&raw, 4, 40, |i| (i as f64 - 80.0) / 8.0);
    let o = mxdp(&["quantize", "--format", "fp6_e2m3", "--in", s(&raw), "--out", s(&mx)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = mxdp(&["quantize", "--decode", "--in", s(&mx), "--out", s(&back)]);
    assert!(o.status.success());
    let Tensor::Mx(q) = tensor_file::load(&mx).unwrap() else { panic!("expected MX") };
    let Tensor::Real(d) = tensor_file::load(&back).unwrap() else { panic!("expected f64") };
    assert_eq!((q.rows, q.cols), (4, 40));
    assert_eq!(d, q.to_real().unwrap());
}

#[test]
fn gemm_writes_outputs_and_groups() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.mxt"), dir.path().join("b.mxt"));
    let (out, q) = (dir.path().join("y.mxt"), dir.path().join("yq.mxt"));
    save_real(&a, 10, 32, |i| ((i * 37) % 11) as f64 - 5.0);
    save_real(&b, 32, 12, |i| ((i * 13) % 7) as f64 * 0.25);
    let o = mxdp(&[
        "--json", "gemm", "--format", "int8", "--a", s(&a), "--b", s(&b), "--out", s(&out), "--quantized-out", s(&q),
    ]);
    let v = stdout_json(&o);
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(10), Some(12)));
    let Tensor::Real(y) = tensor_file::load(&out).unwrap() else { panic!("expected f64") };
    assert_eq!((y.rows, y.cols), (10, 12));
    let Tensor::Mx(g) = tensor_file::load(&q).unwrap() else { panic!("expected MX") };
    assert_eq!((g.rows, g.cols), (2 * 2, 64));
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        let o = mxdp(&[
            "sweep", "--format", "fp8_e4m3", "--size", "16", "--trials", "2", "--widths", "4,8,12", "--seed", "9",
            "--out", s(&p),
        ]);
        assert!(o.status.success());
        std::fs::read(p).unwrap()
    };
    let (x, y) = (run("a.csv"), run("b.csv"));
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert!(text.starts_with("format,size,distribution,variant,seed,mantissa_bits,"));
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().starts_with("fp8_e4m3,16,gaussian,hybrid_iter2,9,4,"));
}

#[test]
fn seed_comes_from_the_environment() {
    let with_env = Command::new(env!("CARGO_BIN_EXE_mxdp"))
        .args(["sweep", "--size", "8", "--trials", "1", "--widths", "6"])
        .env("MXDP_SEED", "42")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&with_env.stdout).contains(",42,6,"));
}

#[test]
fn sweep_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("c.svg");
    let o = mxdp(&["sweep", "--size", "8", "--trials", "1", "--widths", "3,9", "--svg", s(&svg)]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(svg).unwrap().contains("<svg"));
}

#[test]
fn crossover_small_grid() {
    let o = mxdp(&["crossover", "--formats", "fp4_e2m1", "--sizes", "16", "--dists", "gaussian", "--trials", "2"]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(o.status.success());
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.contains("fp4_e2m1,16,gaussian"));
}

#[test]
fn simulate_shipped_workload() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, trace) = (dir.path().join("r.csv"), dir.path().join("t.csv"));
    let w = workload("vit_b16_inference_int8.json");
    let o = mxdp(&["--json", "simulate", "--workload", &w, "--csv", s(&csv), "--trace", s(&trace)]);
    let v = stdout_json(&o);
    assert!(v["utilization"].as_f64().unwrap() >= 0.9);
    assert_eq!(v["batch"], 32);
    assert!(std::fs::read_to_string(csv).unwrap().lines().last().unwrap().starts_with("TOTAL,"));
    assert!(std::fs::read_to_string(trace).unwrap().starts_with("cycle,unit,event"));

    let fp8 = stdout_json(&mxdp(&["--json", "simulate", "--workload", &w, "--mode", "fp8_e4m3"]));
    let int8 = v["achieved_gops"].as_f64().unwrap();
    assert!(fp8["achieved_gops"].as_f64().unwrap() > 3.9 * int8);
}

#[test]
fn simulate_rejects_bad_overrides() {
    let w = workload("resnet18_inference_int8.json");
    assert_eq!(mxdp(&["simulate", "--workload", &w, "--batch", "0"]).status.code(), Some(2));
    assert_eq!(mxdp(&["simulate", "--workload", &w, "--channels", "0"]).status.code(), Some(2));
}
