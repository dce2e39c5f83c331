use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mxdp::block::MxMatrix;
use mxdp::lab::{self, DistributionKind, DistributionSpec, Experiment, ExperimentSpec};
use mxdp::mac::{quantize_group, MacState, PrecisionMode};
use mxdp::npu::{self, SimOptions, StreamerConfig, WorkloadSpec};
use mxdp::tensor_file::{self, Tensor};
use mxdp::tree::{cost_report, AccumulatorValue, TreeConfig, TreeVariant};
use mxdp::{gemm_fp64, gemm_mx, ElementFormat, MxError, RealMatrix};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_SATURATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mxdp", version, about = "Bit-accurate MX multiply-accumulate datapath emulator")]
struct Cli {
    /// Print machine-readable JSON on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantize an f64 tensor file to MX, or decode an MX file with --decode.
    Quantize(QuantizeArgs),
    /// Dot product of two vectors on the MAC model.
    Dot(DotArgs),
    /// GeMM on the MAC model against an FP64 reference.
    Gemm(GemmArgs),
    /// Addition vs. quantization error over accumulator mantissa widths.
    Sweep(SweepArgs),
    /// Critical mantissa widths over a grid of formats, sizes and distributions.
    Crossover(CrossoverArgs),
    /// Datapath widths of a reduction tree.
    Costs(CostsArgs),
    /// Cycle simulation of a GeMM workload on the tensor core.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
struct TreeArgs {
    #[arg(long, default_value = "hybrid_iter2")]
    variant: TreeVariant,
    /// Accumulator mantissa bits (2..=23).
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(2..=23))]
    macc: u32,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    #[arg(long)]
    format: Option<ElementFormat>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Decode an MX tensor to f64 instead.
    #[arg(long)]
    decode: bool,
}

#[derive(Args, Debug)]
struct DotArgs {
    #[arg(long, default_value = "fp8_e4m3")]
    format: ElementFormat,
    /// Tensor file holding the first vector (any shape, read row-major).
    #[arg(long, conflicts_with = "a_values", required_unless_present = "a_values")]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    /// Comma-separated values instead of --a.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    a_values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required_unless_present = "b")]
    b_values: Option<Vec<f64>>,
    #[command(flatten)]
    tree: TreeArgs,
}

#[derive(Args, Debug)]
struct GemmArgs {
    /// Element format used when an input is f64.
    #[arg(long, default_value = "fp8_e4m3")]
    format: ElementFormat,
    /// M x K operand.
    #[arg(long)]
    a: PathBuf,
    /// K x N operand.
    #[arg(long)]
    b: PathBuf,
    /// Accumulator outputs as an f64 tensor file.
    #[arg(long = "out")]
    output: Option<PathBuf>,
    /// Outputs quantized in 8x8 groups, as an MX tensor file.
    #[arg(long)]
    quantized_out: Option<PathBuf>,
    #[command(flatten)]
    tree: TreeArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value = "fp8_e4m3")]
    format: ElementFormat,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value = "gaussian")]
    dist: DistributionKind,
    #[arg(long, env = "MXDP_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = lab::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value = "hybrid_iter2")]
    variant: TreeVariant,
    /// Mantissa widths to sweep.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19,20,21,22,23")]
    widths: Vec<u32>,
    /// CSV output path; stdout when absent.
    #[arg(long = "out")]
    output: Option<PathBuf>,
    /// Optional SVG plot of both curves.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CrossoverArgs {
    #[arg(long, value_delimiter = ',', default_value = "int8,fp8_e5m2,fp8_e4m3,fp6_e3m2,fp6_e2m3,fp4_e2m1")]
    formats: Vec<ElementFormat>,
    #[arg(long, value_delimiter = ',', default_value = "64,256")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "uniform,gaussian")]
    dists: Vec<DistributionKind>,
    #[arg(long, env = "MXDP_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = lab::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value = "hybrid_iter2")]
    variant: TreeVariant,
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CostsArgs {
    #[command(flatten)]
    tree: TreeArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Workload JSON file.
    #[arg(long)]
    workload: PathBuf,
    /// Override every layer's precision mode.
    #[arg(long)]
    mode: Option<PrecisionMode>,
    /// Clock in MHz; defaults to the workload's value.
    #[arg(long)]
    freq: Option<f64>,
    /// Override the workload's batch factor.
    #[arg(long)]
    batch: Option<usize>,
    /// Channels per operand streamer.
    #[arg(long, default_value_t = npu::MAX_CHANNELS)]
    channels: u32,
    /// Per-layer CSV report path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Phase-level cycle trace CSV path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// A failure tagged with the stage it happened in.
struct Failure {
    stage: &'static str,
    error: MxError,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for mxdp::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

impl<T> Stage<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            error: MxError::Io(e),
        })
    }
}

fn exit_code(e: &MxError) -> u8 {
    match e {
        MxError::Saturated => EXIT_SATURATION,
        MxError::UnknownName { .. } | MxError::Csr(_) => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

fn usage(stage: &'static str, msg: String) -> Failure {
    Failure {
        stage,
        error: MxError::UnknownName {
            kind: "argument",
            name: msg,
        },
    }
}

fn show_config(cmd: &str, config: Value) {
    eprintln!("# mxdp {cmd} {}", json!(config));
}

fn emit(json_mode: bool, value: Value, text: String) {
    if json_mode {
        println!("{}", serde_json::to_string_pretty(&value).expect("json value"));
    } else {
        print!("{text}");
    }
}

fn write_out(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).stage("writing output")
}

fn load_real(path: &Path) -> Result<RealMatrix, Failure> {
    match tensor_file::load(path).stage("reading input")? {
        Tensor::Real(m) => Ok(m),
        Tensor::Mx(m) => m.to_real().stage("decoding input"),
    }
}

/// Loads an operand as MX, quantizing f64 files to `format`. With
/// `transpose`, the K x N file becomes the N x K layout.
fn load_mx(path: &Path, format: ElementFormat, transpose: bool) -> Result<MxMatrix, Failure> {
    let t = tensor_file::load(path).stage("reading input")?;
    let real = match (&t, transpose) {
        (Tensor::Mx(m), false) => return Ok(m.clone()),
        (Tensor::Mx(m), true) => m.to_real().stage("decoding input")?.transpose(),
        (Tensor::Real(m), false) => m.clone(),
        (Tensor::Real(m), true) => m.transpose(),
    };
    let format = match &t {
        Tensor::Mx(m) => m.format,
        Tensor::Real(_) => format,
    };
    MxMatrix::from_real(&real, format.spec()).stage("quantizing input")
}

fn check_saturation(outs: &[AccumulatorValue]) -> Result<(), Failure> {
    if outs.iter().any(|o| o.saturated) {
        return Err(Failure {
            stage: "accumulation",
            error: MxError::Saturated,
        });
    }
    Ok(())
}

fn quantize(json_mode: bool, a: QuantizeArgs) -> Result<(), Failure> {
    show_config(
        "quantize",
        json!({"in": a.input, "out": a.output, "format": a.format.map(|f| f.to_string()), "decode": a.decode}),
    );
    let t = tensor_file::load(&a.input).stage("reading input")?;
    let (out, summary) = match (t, a.decode) {
        (Tensor::Mx(m), true) => {
            let real = m.to_real().stage("decoding")?;
            (Tensor::Real(real), json!({"rows": m.rows, "cols": m.cols, "from": m.format.to_string(), "to": "f64"}))
        }
        (Tensor::Real(_), true) => return Err(usage("decoding", "--decode needs an MX input file".into())),
        (Tensor::Real(m), false) => {
            let f = a
                .format
                .ok_or_else(|| usage("quantize", "--format is required when quantizing".into()))?;
            let mx = MxMatrix::from_real(&m, f.spec()).stage("quantizing")?;
            let back = mx.to_real().stage("decoding")?;
            let max_err = m
                .values
                .iter()
                .zip(&back.values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            let s = json!({"rows": m.rows, "cols": m.cols, "from": "f64", "to": f.to_string(),
                           "blocks": mx.blocks.len(), "max_abs_error": max_err});
            (Tensor::Mx(mx), s)
        }
        (Tensor::Mx(_), false) => return Err(usage("quantize", "input is already MX; use --decode".into())),
    };
    tensor_file::save(&a.output, &out).stage("writing output")?;
    let text = format!(
        "{} x {} {} -> {} written to {}\n",
        summary["rows"], summary["cols"], summary["from"].as_str().unwrap_or(""), summary["to"].as_str().unwrap_or(""),
        a.output.display()
    );
    emit(json_mode, summary, text);
    Ok(())
}

fn vector(path: &Option<PathBuf>, values: &Option<Vec<f64>>) -> Result<Vec<f64>, Failure> {
    match (path, values) {
        (Some(p), _) => Ok(load_real(p)?.values),
        (None, Some(v)) => Ok(v.clone()),
        (None, None) => Err(usage("reading input", "missing vector".into())),
    }
}

fn dot(json_mode: bool, a: DotArgs) -> Result<(), Failure> {
    show_config(
        "dot",
        json!({"format": a.format.to_string(), "variant": a.tree.variant.to_string(), "macc": a.tree.macc,
               "a": a.a, "b": a.b}),
    );
    let x = vector(&a.a, &a.a_values)?;
    let y = vector(&a.b, &a.b_values)?;
    if x.len() != y.len() {
        return Err(Failure {
            stage: "reading input",
            error: MxError::Dimension(format!("vector lengths differ: {} vs {}", x.len(), y.len())),
        });
    }
    let spec = a.format.spec();
    let xa = MxMatrix::from_real(&RealMatrix::new(1, x.len(), x).stage("reading input")?, spec).stage("quantizing")?;
    let yb = MxMatrix::from_real(&RealMatrix::new(1, y.len(), y).stage("reading input")?, spec).stage("quantizing")?;
    let mut st = MacState::new(PrecisionMode::from_format(a.format), a.tree.variant, a.tree.macc);
    for (ba, bb) in xa.blocks.iter().zip(&yb.blocks) {
        st = st.mac_dot_block(ba, bb).stage("accumulation")?;
    }
    check_saturation(&[st.accumulator])?;
    let dx = xa.to_real().stage("decoding")?;
    let dy = yb.to_real().stage("decoding")?;
    let reference: f64 = dx.values.iter().zip(&dy.values).map(|(p, q)| p * q).sum();
    let value = st.accumulator.to_f64();
    let v = json!({"value": value, "reference_fp64": reference, "cycles": st.cycles,
                   "abs_error": (value - reference).abs()});
    let text = format!("value {value:e}\nfp64 reference {reference:e}\ncycles {}\n", st.cycles);
    emit(json_mode, v, text);
    Ok(())
}

fn gemm(json_mode: bool, a: GemmArgs) -> Result<(), Failure> {
    show_config(
        "gemm",
        json!({"format": a.format.to_string(), "variant": a.tree.variant.to_string(), "macc": a.tree.macc,
               "a": a.a, "b": a.b, "out": a.output, "quantized_out": a.quantized_out}),
    );
    let am = load_mx(&a.a, a.format, false)?;
    let bt = load_mx(&a.b, a.format, true)?;
    if am.format != bt.format {
        return Err(Failure {
            stage: "reading input",
            error: MxError::FormatMismatch {
                expected: am.format.to_string(),
                got: bt.format.to_string(),
            },
        });
    }
    let outs = gemm_mx(&am, &bt, a.tree.variant, a.tree.macc).stage("gemm")?;
    check_saturation(&outs)?;
    let (m, n) = (am.rows, bt.rows);
    let y = RealMatrix::new(m, n, outs.iter().map(AccumulatorValue::to_f64).collect()).stage("gemm")?;
    let reference = gemm_fp64(
        &am.to_real().stage("decoding")?,
        &bt.to_real().stage("decoding")?.transpose(),
    )
    .stage("reference gemm")?;
    let (mut sum, mut count, mut max) = (0.0, 0usize, 0.0f64);
    for (h, r) in y.values.iter().zip(&reference.values) {
        if r.abs() >= lab::NEAR_ZERO {
            let e = (h - r).abs() / r.abs();
            sum += e;
            count += 1;
            max = max.max(e);
        }
    }
    if let Some(p) = &a.output {
        tensor_file::save(p, &Tensor::Real(y.clone())).stage("writing output")?;
    }
    if let Some(p) = &a.quantized_out {
        let q = quantize_outputs(&outs, m, n, am.format)?;
        tensor_file::save(p, &Tensor::Mx(q)).stage("writing output")?;
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    let v = json!({"rows": m, "cols": n, "inner": am.cols, "format": am.format.to_string(),
                   "mean_relative_error": mean, "max_relative_error": max});
    let text = format!(
        "{m} x {n} (K = {}) {}\nmean relative error vs fp64 {mean:e}\nmax relative error {max:e}\n",
        am.cols, am.format
    );
    emit(json_mode, v, text);
    Ok(())
}

/// Quantizes outputs in 8x8 groups. The result has one row of 64 elements
/// (two blocks with the same scale) per group, groups in row-major tile
/// order, each row holding the group's outputs row-major.
fn quantize_outputs(outs: &[AccumulatorValue], m: usize, n: usize, f: ElementFormat) -> Result<MxMatrix, Failure> {
    let mut blocks = Vec::new();
    for gi in (0..m).step_by(8) {
        for gj in (0..n).step_by(8) {
            let mut group = [AccumulatorValue::zero(outs[0].mantissa_bits); 64];
            for r in 0..8.min(m - gi) {
                for c in 0..8.min(n - gj) {
                    group[r * 8 + c] = outs[(gi + r) * n + gj + c];
                }
            }
            blocks.extend(quantize_group(&group, f.spec()).stage("output quantization")?);
        }
    }
    Ok(MxMatrix {
        format: f,
        rows: blocks.len() / 2,
        cols: 64,
        blocks,
    })
}

fn sweep(json_mode: bool, a: SweepArgs) -> Result<(), Failure> {
    let mut spec = ExperimentSpec::new(a.format, a.size, DistributionSpec::new(a.dist, a.seed));
    spec.trials = a.trials;
    spec.variant = a.variant;
    spec.mantissa_widths = a.widths.clone();
    show_config("sweep", json!(spec));
    let curve = Experiment::prepare(&spec).stage("workload generation")?.run().stage("sweep")?;
    let csv = lab::curve_csv(std::slice::from_ref(&curve));
    match &a.output {
        Some(p) => write_out(p, &csv)?,
        None if !json_mode => print!("{csv}"),
        None => {}
    }
    if let Some(p) = &a.svg {
        write_out(p, &lab::curve_svg(&curve))?;
    }
    let mut text = String::new();
    if a.output.is_some() {
        let _ = writeln!(text, " M  addition      quantization");
        for p in &curve.points {
            let _ = writeln!(
                text,
                "{:2}  {:.4e}  {:.4e}",
                p.mantissa_bits, p.addition_error_mean, p.quantization_error_mean
            );
        }
    }
    let _ = writeln!(
        text,
        "crossover {}",
        curve.crossover.map_or("none".to_string(), |c| c.to_string())
    );
    if json_mode {
        emit(true, json!(curve), String::new());
    } else if a.output.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    Ok(())
}

fn crossover(json_mode: bool, a: CrossoverArgs) -> Result<(), Failure> {
    show_config(
        "crossover",
        json!({"formats": a.formats.iter().map(|f| f.to_string()).collect::<Vec<_>>(), "sizes": a.sizes,
               "dists": a.dists.iter().map(|d| d.to_string()).collect::<Vec<_>>(), "seed": a.seed,
               "trials": a.trials, "variant": a.variant.to_string()}),
    );
    let table = lab::critical_width_table(&a.formats, &a.sizes, &a.dists, a.variant, a.trials, a.seed)
        .stage("crossover sweep")?;
    let csv = lab::crossover_csv(&table);
    if let Some(p) = &a.output {
        write_out(p, &csv)?;
    }
    let mut text = String::new();
    for e in &table.entries {
        let _ = writeln!(
            text,
            "{:<12} {:>4} {:<9} {}",
            e.format.to_string(),
            e.matrix_size,
            e.distribution.to_string(),
            e.critical_width.map_or("none".into(), |w| w.to_string())
        );
    }
    let _ = writeln!(
        text,
        "maximum {}",
        table.maximum().map_or("none".into(), |w| w.to_string())
    );
    let mut v = json!(table);
    v["maximum"] = json!(table.maximum());
    if a.output.is_none() && !json_mode {
        // Keep stdout pure CSV, like `sweep`.
        print!("{csv}");
        eprint!("{text}");
    } else {
        emit(json_mode, v, text);
    }
    Ok(())
}

fn costs(json_mode: bool, a: CostsArgs) -> Result<(), Failure> {
    show_config("costs", json!({"variant": a.tree.variant.to_string(), "macc": a.tree.macc}));
    let r = cost_report(&TreeConfig::new(a.tree.variant, a.tree.macc));
    let mut text = String::new();
    let _ = writeln!(text, "variant                      {}", r.variant);
    let _ = writeln!(text, "accumulator mantissa bits    {}", r.acc_mantissa_bits);
    let _ = writeln!(text, "significand width S          {}", r.significand_bits);
    let _ = writeln!(text, "L2 shifter width             {}", r.l2_shifter_width);
    let _ = writeln!(text, "L2 adder width               {}", r.l2_adder_width);
    let _ = writeln!(text, "accumulator alignment width  {}", r.accumulator_alignment_width);
    let _ = writeln!(text, "accumulation adder width     {}", r.accumulation_adder_width);
    let _ = writeln!(text, "normalizer width             {}", r.normalization_input_width);
    let _ = writeln!(text, "normalizers                  {}", r.normalizer_count);
    let _ = writeln!(text, "mux bits                     {}", r.mux_bits);
    emit(json_mode, json!(r), text);
    Ok(())
}

fn simulate(json_mode: bool, a: SimulateArgs) -> Result<(), Failure> {
    let mut w = WorkloadSpec::load(&a.workload).stage("reading workload")?;
    if let Some(m) = a.mode {
        w = w.with_mode(m);
    }
    if let Some(b) = a.batch {
        w.batch = b;
    }
    let freq = a.freq.unwrap_or(w.freq_mhz);
    let streamers = StreamerConfig::with_channels(a.channels);
    show_config(
        "simulate",
        json!({"workload": a.workload, "layers": w.layers.len(), "batch": w.batch, "freq_mhz": freq,
               "mode_override": a.mode.map(|m| m.to_string()), "streamers": streamers}),
    );
    let opts = SimOptions { trace: a.trace.is_some() };
    let report = npu::simulate_gemm(&w, &streamers, freq, &opts).stage("simulation")?;
    if let Some(p) = &a.csv {
        write_out(p, &npu::report_csv(&report))?;
    }
    if let Some(p) = &a.trace {
        write_out(p, &npu::trace_csv(&report.trace))?;
    }
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<24} {:<11} {:>10} {:>12} {:>12} {:>7} {:>9}",
        "layer", "mode", "tiles", "ideal", "total", "util", "GOPS"
    );
    for l in &report.layers {
        let _ = writeln!(
            text,
            "{:<24} {:<11} {:>10} {:>12} {:>12} {:>6.2}% {:>9.2}",
            l.label,
            l.mode.to_string(),
            l.tiles,
            l.ideal_cycles,
            l.total_cycles,
            100.0 * l.utilization,
            l.achieved_gops
        );
    }
    let _ = writeln!(
        text,
        "{:<24} {:<11} {:>10} {:>12} {:>12} {:>6.2}% {:>9.2}",
        "TOTAL",
        "",
        "",
        report.ideal_cycles,
        report.total_cycles,
        100.0 * report.utilization,
        report.achieved_gops
    );
    let mut v = json!(report);
    if let Some(obj) = v.as_object_mut() {
        obj.remove("trace");
    }
    emit(json_mode, v, text);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json_mode = cli.json;
    let result = match cli.command {
        Command::Quantize(a) => quantize(json_mode, a),
        Command::Dot(a) => dot(json_mode, a),
        Command::Gemm(a) => gemm(json_mode, a),
        Command::Sweep(a) => sweep(json_mode, a),
        Command::Crossover(a) => crossover(json_mode, a),
        Command::Costs(a) => costs(json_mode, a),
        Command::Simulate(a) => simulate(json_mode, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mxdp: {} failed: {}", f.stage, f.error);
            ExitCode::from(exit_code(&f.error))
        }
    }
}
