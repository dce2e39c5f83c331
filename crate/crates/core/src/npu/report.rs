use serde::Serialize;

use crate::mac::PrecisionMode;

/// Activity of one streamer channel over a layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChannelCounter {
    /// `a`, `b` or `scale`.
    pub stream: String,
    pub channel: u32,
    pub active: bool,
    pub busy_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub label: String,
    pub mode: PrecisionMode,
    /// Rows after applying the batch factor.
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub m_tiles: u64,
    pub n_tiles: u64,
    pub k_tiles: u64,
    pub tiles: u64,
    /// Padded tile count times cycles per tile.
    pub ideal_cycles: u64,
    pub compute_cycles: u64,
    pub supply_cycles: u64,
    pub config_cycles: u64,
    pub pipeline_cycles: u64,
    /// Quantization cycles not hidden behind the array.
    pub quant_cycles: u64,
    /// Cycles the quantization unit is busy.
    pub quant_busy_cycles: u64,
    pub total_cycles: u64,
    /// `ideal_cycles / total_cycles`.
    pub utilization: f64,
    pub peak_gops: f64,
    pub achieved_gops: f64,
    pub bandwidth_limited: bool,
    pub active_channels: u32,
    pub channels: Vec<ChannelCounter>,
}

impl LayerReport {
    /// Total cycles without the layer's configuration cost.
    pub fn body_cycles(&self) -> u64 {
        self.total_cycles - self.config_cycles
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub unit: String,
    pub event: String,
}

impl TraceEvent {
    pub fn new(cycle: u64, unit: &str, event: String) -> Self {
        TraceEvent {
            cycle,
            unit: unit.to_string(),
            event,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub freq_mhz: f64,
    pub batch: usize,
    pub layers: Vec<LayerReport>,
    pub ideal_cycles: u64,
    pub total_cycles: u64,
    pub utilization: f64,
    /// Useful operations over wall time, in GOPS.
    pub achieved_gops: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEvent>,
}

impl SimReport {
    pub(crate) fn new(layers: Vec<LayerReport>, batch: usize, freq_mhz: f64, trace: Vec<TraceEvent>) -> Self {
        let ideal: u64 = layers.iter().map(|l| l.ideal_cycles).sum();
        let total: u64 = layers.iter().map(|l| l.total_cycles).sum();
        let ops: f64 = layers
            .iter()
            .map(|l| l.peak_gops * l.ideal_cycles as f64)
            .sum();
        SimReport {
            freq_mhz,
            batch,
            ideal_cycles: ideal,
            total_cycles: total,
            utilization: ideal as f64 / total as f64,
            achieved_gops: ops / total as f64,
            layers,
            trace,
        }
    }
}

#[derive(Serialize)]
struct LayerRow<'a> {
    label: &'a str,
    mode: PrecisionMode,
    m: usize,
    k: usize,
    n: usize,
    tiles: u64,
    ideal_cycles: u64,
    compute_cycles: u64,
    supply_cycles: u64,
    config_cycles: u64,
    pipeline_cycles: u64,
    quant_cycles: u64,
    quant_busy_cycles: u64,
    total_cycles: u64,
    utilization: f64,
    peak_gops: f64,
    achieved_gops: f64,
    bandwidth_limited: bool,
    active_channels: u32,
}

fn write_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// One row per layer followed by a `TOTAL` row.
pub fn report_csv(r: &SimReport) -> String {
    let total = LayerRow {
        label: "TOTAL",
        mode: r.layers.first().map_or(PrecisionMode::MxInt8, |l| l.mode),
        m: 0,
        k: 0,
        n: 0,
        tiles: r.layers.iter().map(|l| l.tiles).sum(),
        ideal_cycles: r.ideal_cycles,
        compute_cycles: r.layers.iter().map(|l| l.compute_cycles).sum(),
        supply_cycles: r.layers.iter().map(|l| l.supply_cycles).sum(),
        config_cycles: r.layers.iter().map(|l| l.config_cycles).sum(),
        pipeline_cycles: r.layers.iter().map(|l| l.pipeline_cycles).sum(),
        quant_cycles: r.layers.iter().map(|l| l.quant_cycles).sum(),
        quant_busy_cycles: r.layers.iter().map(|l| l.quant_busy_cycles).sum(),
        total_cycles: r.total_cycles,
        utilization: r.utilization,
        peak_gops: f64::NAN,
        achieved_gops: r.achieved_gops,
        bandwidth_limited: r.layers.iter().any(|l| l.bandwidth_limited),
        active_channels: 0,
    };
    write_csv(
        r.layers
            .iter()
            .map(|l| LayerRow {
                label: &l.label,
                mode: l.mode,
                m: l.m,
                k: l.k,
                n: l.n,
                tiles: l.tiles,
                ideal_cycles: l.ideal_cycles,
                compute_cycles: l.compute_cycles,
                supply_cycles: l.supply_cycles,
                config_cycles: l.config_cycles,
                pipeline_cycles: l.pipeline_cycles,
                quant_cycles: l.quant_cycles,
                quant_busy_cycles: l.quant_busy_cycles,
                total_cycles: l.total_cycles,
                utilization: l.utilization,
                peak_gops: l.peak_gops,
                achieved_gops: l.achieved_gops,
                bandwidth_limited: l.bandwidth_limited,
                active_channels: l.active_channels,
            })
            .chain(std::iter::once(total)),
    )
}

/// `cycle,unit,event` rows.
pub fn trace_csv(events: &[TraceEvent]) -> String {
    write_csv(events)
}
