//! Accumulation-error versus output-quantization-error study.
//!
//! For each mantissa width `M` the MX GeMM is run on the MAC model with the
//! accumulator at `M` bits and compared with an FP64 GeMM of the *same*
//! decoded inputs, so input quantization cancels out. The result is set
//! against the error of quantizing the FP64 outputs back to the element
//! format in 8x8 groups. The critical width is the smallest `M` whose
//! quantization error exceeds the addition error.

mod output;

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::block::{decode_block, MxBlock, MxMatrix, BLOCK_SIZE};
use crate::error::{MxError, Result};
use crate::format::{pow2, ElementFormat};
use crate::mac::{cycle_terms, group_blocks, PrecisionMode};
use crate::matrix::RealMatrix;
use crate::tree::{reduce, AccumulatorValue, ProductTerm, TreeConfig, TreeVariant, TERMS_PER_CYCLE};

pub use output::{crossover_csv, curve_csv, curve_svg, CrossoverRow};

/// Shared exponents of the uniform distribution lie in `-32..=32`.
pub const UNIFORM_EXPONENT_RANGE: i32 = 32;
/// `6 sigma = 2^32`.
pub const GAUSSIAN_SIGMA: f64 = 4294967296.0 / 6.0;
/// References with a smaller magnitude are left out of relative errors.
pub const NEAR_ZERO: f64 = 7.888609052210118e-31; // 2^-100
pub const DEFAULT_TRIALS: usize = 8;
pub const STUDY_SIZES: [usize; 2] = [64, 256];
/// Side of the square output group quantized with one shared exponent.
pub const OUTPUT_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionKind {
    Uniform,
    Gaussian,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 2] = [DistributionKind::Uniform, DistributionKind::Gaussian];

    pub fn as_str(self) -> &'static str {
        match self {
            DistributionKind::Uniform => "uniform",
            DistributionKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistributionKind {
    type Err = MxError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(DistributionKind::Uniform),
            "gaussian" | "normal" => Ok(DistributionKind::Gaussian),
            _ => Err(MxError::UnknownName {
                kind: "distribution",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn new(kind: DistributionKind, seed: u64) -> Self {
        DistributionSpec { kind, seed }
    }

    pub fn sigma(&self) -> f64 {
        GAUSSIAN_SIGMA
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub format: ElementFormat,
    pub matrix_size: usize,
    pub distribution: DistributionSpec,
    pub mantissa_widths: Vec<u32>,
    pub variant: TreeVariant,
    pub trials: usize,
}

impl ExperimentSpec {
    /// Full width sweep `2..=23` with the default tree and trial count.
    pub fn new(format: ElementFormat, matrix_size: usize, distribution: DistributionSpec) -> Self {
        ExperimentSpec {
            format,
            matrix_size,
            distribution,
            mantissa_widths: (2..=23).collect(),
            variant: TreeVariant::HybridIter2,
            trials: DEFAULT_TRIALS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.matrix_size == 0 {
            return Err(MxError::Dimension("matrix size must be positive".into()));
        }
        if self.trials == 0 {
            return Err(MxError::Dimension("at least one trial is required".into()));
        }
        if let Some(&m) = self.mantissa_widths.iter().find(|&&m| !(2..=23).contains(&m)) {
            return Err(MxError::Dimension(format!("mantissa width {m} outside 2..=23")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    A,
    B,
}

/// An MX operand and its exact FP64 decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMatrix {
    /// Blocked along K: `A` is M x K, `B` is stored transposed as N x K.
    pub mx: MxMatrix,
    pub decoded: RealMatrix,
}

fn trial_rng(seed: u64, trial: usize, which: Operand) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = 2 * trial as u64 + matches!(which, Operand::B) as u64;
    rng.set_stream(stream);
    rng
}

/// Generates one square operand of trial `trial`.
pub fn generate_matrix(spec: &ExperimentSpec, which: Operand, trial: usize) -> Result<GeneratedMatrix> {
    let n = spec.matrix_size;
    let fspec = spec.format.spec();
    let mut rng = trial_rng(spec.distribution.seed, trial, which);
    let mx = match spec.distribution.kind {
        DistributionKind::Uniform => {
            let valid: Vec<u8> = (0..fspec.code_count())
                .map(|c| c as u8)
                .filter(|&c| !fspec.is_special(c))
                .collect();
            let pick = Uniform::new(0, valid.len());
            let exps = Uniform::new_inclusive(-UNIFORM_EXPONENT_RANGE, UNIFORM_EXPONENT_RANGE);
            let bpr = MxMatrix::blocks_per_row(n);
            let mut blocks = Vec::with_capacity(n * bpr);
            for _ in 0..n {
                for b in 0..bpr {
                    let mut blk = MxBlock::zero(spec.format);
                    blk.shared_exponent = (exps.sample(&mut rng) + 127) as u8;
                    let live = (n - b * BLOCK_SIZE).min(BLOCK_SIZE);
                    for e in &mut blk.elements[..live] {
                        *e = valid[pick.sample(&mut rng)];
                    }
                    blocks.push(blk);
                }
            }
            MxMatrix {
                format: spec.format,
                rows: n,
                cols: n,
                blocks,
            }
        }
        DistributionKind::Gaussian => {
            let normal = Normal::new(0.0, spec.distribution.sigma()).expect("finite sigma");
            let values: Vec<f64> = (0..n * n).map(|_| normal.sample(&mut rng)).collect();
            MxMatrix::from_real(&RealMatrix::new(n, n, values)?, fspec)?
        }
    };
    let decoded = mx.to_real()?;
    Ok(GeneratedMatrix { mx, decoded })
}

/// Statistics at one mantissa width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorPoint {
    pub mantissa_bits: u32,
    pub addition_error_mean: f64,
    pub addition_error_median: f64,
    pub quantization_error_mean: f64,
    pub quantization_error_median: f64,
    /// Trials that contributed.
    pub trials: usize,
    /// Trials dropped because the accumulator saturated.
    pub discarded_trials: usize,
    /// Output elements left out as near-zero references.
    pub excluded_elements: usize,
    pub total_elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub format: ElementFormat,
    pub matrix_size: usize,
    pub distribution: DistributionKind,
    pub variant: TreeVariant,
    pub seed: u64,
    pub points: Vec<ErrorPoint>,
    /// Smallest swept width whose quantization error exceeds the addition
    /// error, if any.
    pub crossover: Option<u32>,
}

impl ErrorCurve {
    fn crossover_of(points: &[ErrorPoint]) -> Option<u32> {
        points
            .iter()
            .filter(|p| p.trials > 0 && p.quantization_error_mean > p.addition_error_mean)
            .map(|p| p.mantissa_bits)
            .min()
    }
}

/// Operands and FP64 references of one trial.
struct Trial {
    a: MxMatrix,
    bt: MxMatrix,
    y_ref: Vec<f64>,
    /// Relative quantization error per output, `None` when excluded.
    quant_err: Vec<Option<f64>>,
}

fn prepare_trial(spec: &ExperimentSpec, trial: usize) -> Result<Trial> {
    let a = generate_matrix(spec, Operand::A, trial)?;
    let bt = generate_matrix(spec, Operand::B, trial)?;
    let n = spec.matrix_size;
    let y_ref = gemm_rows(&a.decoded, &bt.decoded);
    let quant_err = quantization_errors(&y_ref, n, n, spec.format)?;
    Ok(Trial {
        a: a.mx,
        bt: bt.mx,
        y_ref,
        quant_err,
    })
}

/// `A * Bt^T` in FP64, each dot product summed left to right.
fn gemm_rows(a: &RealMatrix, bt: &RealMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.rows * bt.rows);
    for i in 0..a.rows {
        for j in 0..bt.rows {
            out.push(a.row(i).iter().zip(bt.row(j)).map(|(x, y)| x * y).sum());
        }
    }
    out
}

fn relative_error(y: f64, y_ref: f64) -> Option<f64> {
    (y_ref.abs() >= NEAR_ZERO).then(|| (y - y_ref).abs() / y_ref.abs())
}

/// Quantizes a row-major output matrix in 8x8 groups and returns the
/// per-element relative error. Partial edge groups are zero-padded.
pub fn quantization_errors(y: &[f64], rows: usize, cols: usize, format: ElementFormat) -> Result<Vec<Option<f64>>> {
    let spec = format.spec();
    let mut out = vec![None; rows * cols];
    let mut group = [0.0f64; OUTPUT_GROUP * OUTPUT_GROUP];
    for gi in (0..rows).step_by(OUTPUT_GROUP) {
        for gj in (0..cols).step_by(OUTPUT_GROUP) {
            group.fill(0.0);
            for r in 0..OUTPUT_GROUP.min(rows - gi) {
                for c in 0..OUTPUT_GROUP.min(cols - gj) {
                    group[r * OUTPUT_GROUP + c] = y[(gi + r) * cols + gj + c];
                }
            }
            let blocks = group_blocks(&group, spec)?;
            let mut dec = [0.0f64; OUTPUT_GROUP * OUTPUT_GROUP];
            dec[..BLOCK_SIZE].copy_from_slice(&decode_block(&blocks[0])?);
            dec[BLOCK_SIZE..].copy_from_slice(&decode_block(&blocks[1])?);
            for r in 0..OUTPUT_GROUP.min(rows - gi) {
                for c in 0..OUTPUT_GROUP.min(cols - gj) {
                    let idx = (gi + r) * cols + gj + c;
                    out[idx] = relative_error(dec[r * OUTPUT_GROUP + c], y[idx]);
                }
            }
        }
    }
    Ok(out)
}

type Step = ([ProductTerm; TERMS_PER_CYCLE], u8, u8);

/// Tree inputs of output `(i, j)`, one entry per MAC cycle.
fn output_steps(mode: PrecisionMode, a: &MxMatrix, bt: &MxMatrix, i: usize, j: usize, steps: &mut Vec<Step>) -> Result<()> {
    let ppc = mode.products_per_cycle();
    steps.clear();
    for k in 0..MxMatrix::blocks_per_row(a.cols) {
        let (ba, bb) = (a.block(i, k), bt.block(j, k));
        for (ca, cb) in ba.elements.chunks(ppc).zip(bb.elements.chunks(ppc)) {
            steps.push((cycle_terms(mode, ca, cb)?, ba.shared_exponent, bb.shared_exponent));
        }
    }
    Ok(())
}

fn accumulate(steps: &[Step], base: &TreeConfig) -> AccumulatorValue {
    let mut acc = AccumulatorValue::zero(base.acc_mantissa_bits);
    for (terms, sa, sb) in steps {
        acc = reduce(terms, &acc, &base.with_shared(*sa, *sb));
    }
    acc
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Widths evaluated per pass over the operands when stopping early.
const EARLY_STOP_BATCH: usize = 4;

/// Prepared trials of one experiment, reusable across widths.
pub struct Experiment {
    spec: ExperimentSpec,
    mode: PrecisionMode,
    trials: Vec<Trial>,
}

impl Experiment {
    pub fn prepare(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let trials = (0..spec.trials)
            .map(|t| prepare_trial(spec, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Experiment {
            spec: spec.clone(),
            mode: PrecisionMode::from_format(spec.format),
            trials,
        })
    }

    /// Evaluates several widths in one pass: the terms of each output are
    /// built once and replayed per width. Errors are pooled over trials in
    /// trial, row, column order.
    pub fn points(&self, widths: &[u32]) -> Result<Vec<ErrorPoint>> {
        let n = self.spec.matrix_size;
        let offset = self.mode.term_exponent_offset();
        let configs: Vec<TreeConfig> = widths
            .iter()
            .map(|&m| TreeConfig::new(self.spec.variant, m).with_offset(offset))
            .collect();
        let mut add: Vec<Vec<f64>> = vec![Vec::new(); widths.len()];
        let mut quant: Vec<Vec<f64>> = vec![Vec::new(); widths.len()];
        let mut used = vec![0usize; widths.len()];
        let mut excluded = vec![0usize; widths.len()];
        let mut steps = Vec::new();
        let mut y_hw = vec![vec![0.0f64; n * n]; widths.len()];
        for trial in &self.trials {
            let mut saturated = vec![false; widths.len()];
            for i in 0..n {
                for j in 0..n {
                    output_steps(self.mode, &trial.a, &trial.bt, i, j, &mut steps)?;
                    for (w, cfg) in configs.iter().enumerate() {
                        let acc = accumulate(&steps, cfg);
                        saturated[w] |= acc.saturated;
                        y_hw[w][i * n + j] = acc.to_f64();
                    }
                }
            }
            for w in 0..widths.len() {
                if saturated[w] {
                    continue;
                }
                used[w] += 1;
                for ((&y, &y_ref), &q) in y_hw[w].iter().zip(&trial.y_ref).zip(&trial.quant_err) {
                    match (relative_error(y, y_ref), q) {
                        (Some(e), Some(q)) => {
                            add[w].push(e);
                            quant[w].push(q);
                        }
                        _ => excluded[w] += 1,
                    }
                }
            }
        }
        Ok(widths
            .iter()
            .enumerate()
            .map(|(w, &m)| ErrorPoint {
                mantissa_bits: m,
                addition_error_mean: mean(&add[w]),
                addition_error_median: median(&mut add[w]),
                quantization_error_mean: mean(&quant[w]),
                quantization_error_median: median(&mut quant[w]),
                trials: used[w],
                discarded_trials: self.trials.len() - used[w],
                excluded_elements: excluded[w],
                total_elements: used[w] * n * n,
            })
            .collect())
    }

    fn curve(&self, points: Vec<ErrorPoint>) -> ErrorCurve {
        ErrorCurve {
            format: self.spec.format,
            matrix_size: self.spec.matrix_size,
            distribution: self.spec.distribution.kind,
            variant: self.spec.variant,
            seed: self.spec.distribution.seed,
            crossover: ErrorCurve::crossover_of(&points),
            points,
        }
    }

    pub fn run(&self) -> Result<ErrorCurve> {
        let points = self.points(&self.spec.mantissa_widths)?;
        Ok(self.curve(points))
    }

    /// Sweeps the widths in ascending batches and stops after the batch that
    /// contains the first crossover. Gives the same crossover as
    /// [`Experiment::run`]; points past the crossover may be missing.
    pub fn run_until_crossover(&self) -> Result<ErrorCurve> {
        let mut widths = self.spec.mantissa_widths.clone();
        widths.sort_unstable();
        widths.dedup();
        let mut points = Vec::new();
        for batch in widths.chunks(EARLY_STOP_BATCH) {
            points.extend(self.points(batch)?);
            if ErrorCurve::crossover_of(&points).is_some() {
                break;
            }
        }
        Ok(self.curve(points))
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ErrorCurve> {
    Experiment::prepare(spec)?.run()
}

/// One cell of the critical-width grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalWidth {
    pub format: ElementFormat,
    pub matrix_size: usize,
    pub distribution: DistributionKind,
    pub critical_width: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalWidthTable {
    pub variant: TreeVariant,
    pub seed: u64,
    pub trials: usize,
    pub entries: Vec<CriticalWidth>,
}

impl CriticalWidthTable {
    /// Highest critical width over the grid; `None` if a cell never
    /// crossed within the swept widths.
    pub fn maximum(&self) -> Option<u32> {
        self.entries
            .iter()
            .map(|e| e.critical_width)
            .try_fold(0, |m, w| w.map(|w| m.max(w)))
    }

    pub fn get(&self, format: ElementFormat, size: usize, dist: DistributionKind) -> Option<&CriticalWidth> {
        self.entries
            .iter()
            .find(|e| e.format == format && e.matrix_size == size && e.distribution == dist)
    }
}

/// Critical widths over the grid, in format, size, distribution order.
pub fn critical_width_table(
    formats: &[ElementFormat],
    sizes: &[usize],
    distributions: &[DistributionKind],
    variant: TreeVariant,
    trials: usize,
    seed: u64,
) -> Result<CriticalWidthTable> {
    let mut entries = Vec::new();
    for &format in formats {
        for &size in sizes {
            for &kind in distributions {
                let mut spec = ExperimentSpec::new(format, size, DistributionSpec::new(kind, seed));
                spec.variant = variant;
                spec.trials = trials;
                let curve = Experiment::prepare(&spec)?.run_until_crossover()?;
                entries.push(CriticalWidth {
                    format,
                    matrix_size: size,
                    distribution: kind,
                    critical_width: curve.crossover,
                });
            }
        }
    }
    Ok(CriticalWidthTable {
        variant,
        seed,
        trials,
        entries,
    })
}

/// Draws `n` values from the study's Gaussian. Exposed for statistical
/// checks of the generator.
pub fn gaussian_samples(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, GAUSSIAN_SIGMA).expect("finite sigma");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// Scale of a uniform shared exponent code, for sanity checks.
pub fn uniform_scale_in_range(code: u8) -> bool {
    let e = code as i32 - 127;
    (-UNIFORM_EXPONENT_RANGE..=UNIFORM_EXPONENT_RANGE).contains(&e) && pow2(e) > 0.0
}
