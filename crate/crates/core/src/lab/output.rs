use std::fmt::Write as _;

use serde::Serialize;

use super::{CriticalWidthTable, DistributionKind, ErrorCurve};
use crate::format::ElementFormat;
use crate::tree::TreeVariant;

#[derive(Debug, Serialize)]
struct CurveRow {
    format: ElementFormat,
    size: usize,
    distribution: DistributionKind,
    variant: TreeVariant,
    seed: u64,
    mantissa_bits: u32,
    addition_error_mean: f64,
    addition_error_median: f64,
    quantization_error_mean: f64,
    quantization_error_median: f64,
    trials: usize,
    discarded_trials: usize,
    excluded_elements: usize,
    total_elements: usize,
    crossover: Option<u32>,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// One row per (curve, width).
pub fn curve_csv(curves: &[ErrorCurve]) -> String {
    to_csv(curves.iter().flat_map(|c| {
        c.points.iter().map(move |p| CurveRow {
            format: c.format,
            size: c.matrix_size,
            distribution: c.distribution,
            variant: c.variant,
            seed: c.seed,
            mantissa_bits: p.mantissa_bits,
            addition_error_mean: p.addition_error_mean,
            addition_error_median: p.addition_error_median,
            quantization_error_mean: p.quantization_error_mean,
            quantization_error_median: p.quantization_error_median,
            trials: p.trials,
            discarded_trials: p.discarded_trials,
            excluded_elements: p.excluded_elements,
            total_elements: p.total_elements,
            crossover: c.crossover,
        })
    }))
}

#[derive(Debug, Serialize)]
pub struct CrossoverRow {
    pub format: ElementFormat,
    pub size: usize,
    pub distribution: DistributionKind,
    pub variant: TreeVariant,
    pub trials: usize,
    pub seed: u64,
    /// Empty when no swept width crossed.
    pub critical_width: Option<u32>,
}

/// The crossover grid, one row per cell.
pub fn crossover_csv(table: &CriticalWidthTable) -> String {
    to_csv(table.entries.iter().map(|e| CrossoverRow {
        format: e.format,
        size: e.matrix_size,
        distribution: e.distribution,
        variant: table.variant,
        trials: table.trials,
        seed: table.seed,
        critical_width: e.critical_width,
    }))
}

/// Log-scale line plot of both error curves.
pub fn curve_svg(curve: &ErrorCurve) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let pts = &curve.points;
    let logs = |f: fn(&super::ErrorPoint) -> f64| -> Vec<(u32, f64)> {
        pts.iter()
            .map(|p| (p.mantissa_bits, f(p)))
            .filter(|(_, v)| *v > 0.0 && v.is_finite())
            .map(|(m, v)| (m, v.log10()))
            .collect()
    };
    let add = logs(|p| p.addition_error_mean);
    let quant = logs(|p| p.quantization_error_mean);
    let all: Vec<f64> = add.iter().chain(&quant).map(|p| p.1).collect();
    let (lo, hi) = all.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if all.is_empty() { (0.0, 1.0) } else { (lo.floor(), hi.ceil().max(lo.floor() + 1.0)) };
    let (m0, m1) = pts
        .iter()
        .fold((u32::MAX, 0), |(a, b), p| (a.min(p.mantissa_bits), b.max(p.mantissa_bits)));
    let span = (m1.saturating_sub(m0)).max(1) as f64;
    let x = |m: u32| PAD + (m.saturating_sub(m0)) as f64 / span * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{} {}x{} {}</text>"#,
        W / 2.0,
        curve.format,
        curve.matrix_size,
        curve.matrix_size,
        curve.distribution
    );
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for d in (lo as i32)..=(hi as i32) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">1e{d}</text>"#,
            PAD - 4.0,
            y(d as f64) + 4.0
        );
    }
    for p in pts {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x(p.mantissa_bits),
            H - PAD + 16.0,
            p.mantissa_bits
        );
    }
    for (series, color) in [(&add, "#1f77b4"), (&quant, "#d62728")] {
        let path: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(i, &(m, v))| format!("{}{:.1} {:.1}", if i == 0 { 'M' } else { 'L' }, x(m), y(v)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}"/>"#, path.join(" "));
    }
    let _ = writeln!(
        s,
        r##"<text x="{}" y="40" fill="#1f77b4">addition</text><text x="{}" y="56" fill="#d62728">quantization</text>"##,
        W - PAD - 80.0,
        W - PAD - 80.0
    );
    s.push_str("</svg>\n");
    s
}
