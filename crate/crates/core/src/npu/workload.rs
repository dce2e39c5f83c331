use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{MxError, Result};
use crate::mac::PrecisionMode;

/// One GeMM layer: `M x K` times `K x N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub label: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(serialize_with = "mode_out", deserialize_with = "mode_in")]
    pub mode: PrecisionMode,
}

fn mode_out<S: Serializer>(m: &PrecisionMode, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(m.as_str())
}

fn mode_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<PrecisionMode, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

fn default_batch() -> usize {
    1
}

fn default_freq() -> f64 {
    500.0
}

/// A list of GeMM layers. `batch` multiplies every layer's M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_freq")]
    pub freq_mhz: f64,
}

impl WorkloadSpec {
    pub fn single(label: &str, m: usize, k: usize, n: usize, mode: PrecisionMode) -> Self {
        WorkloadSpec {
            layers: vec![LayerSpec {
                label: label.to_string(),
                m,
                k,
                n,
                mode,
            }],
            batch: 1,
            freq_mhz: default_freq(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(MxError::Workload("no layers".into()));
        }
        if self.batch == 0 {
            return Err(MxError::Workload("batch must be positive".into()));
        }
        if !(self.freq_mhz > 0.0 && self.freq_mhz.is_finite()) {
            return Err(MxError::Workload(format!("frequency {} MHz is not positive", self.freq_mhz)));
        }
        for l in &self.layers {
            if l.m == 0 || l.k == 0 || l.n == 0 {
                return Err(MxError::Workload(format!(
                    "layer `{}` has a zero dimension ({}x{}x{})",
                    l.label, l.m, l.k, l.n
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: WorkloadSpec = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Returns a copy with every layer switched to `mode`.
    pub fn with_mode(&self, mode: PrecisionMode) -> Self {
        let mut w = self.clone();
        for l in &mut w.layers {
            l.mode = mode;
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_defaults() {
        let w = WorkloadSpec::from_json(r#"{"layers":[{"label":"fc","M":1,"K":512,"N":1000,"mode":"mxfp8_e4m3"}]}"#)
            .unwrap();
        assert_eq!(w.batch, 1);
        assert_eq!(w.freq_mhz, 500.0);
        assert_eq!(w.layers[0].mode, PrecisionMode::MxFp8E4M3);
        let back = serde_json::to_string(&w).unwrap();
        assert_eq!(WorkloadSpec::from_json(&back).unwrap(), w);
    }

    #[test]
    fn zero_dimension_rejected() {
        let e = WorkloadSpec::from_json(r#"{"layers":[{"label":"x","M":0,"K":8,"N":8,"mode":"int8"}]}"#);
        assert!(matches!(e, Err(MxError::Workload(_))));
    }

    #[test]
    fn bad_mode_rejected() {
        assert!(WorkloadSpec::from_json(r#"{"layers":[{"label":"x","M":8,"K":8,"N":8,"mode":"fp16"}]}"#).is_err());
    }
}
