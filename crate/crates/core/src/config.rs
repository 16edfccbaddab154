//! Tunable defaults for every stage, overridable from a `key = value` file.
//!
//! Keys are dotted paths into [`Config`] (`qc.contrast_frac = 0.1`,
//! `register.levels = 8`). Values are parsed as JSON where possible and
//! taken as strings otherwise. `#` starts a comment.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::{CELL_THRESHOLD, PATIENT_THRESHOLD};
use crate::peaks::{PeakParams, DEFAULT_MERGE_RADIUS};
use crate::pipeline::{PipelineConfig, QcParams};
use crate::registration::GlobalParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub register: GlobalParams,
    /// Longest side of the coarsest registration level.
    pub register_coarse_side: usize,
    pub pipeline: PipelineConfig,
    pub peaks: PeakParams,
    pub merge_radius: f64,
    /// DoG sigma of the baseline detector, in heatmap pixels.
    pub detector_sigma: f64,
    pub cell_threshold: f64,
    pub patient_threshold: f64,
    pub partitions: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            register: GlobalParams::default(),
            register_coarse_side: 64,
            pipeline: PipelineConfig::default(),
            peaks: PeakParams::default(),
            merge_radius: DEFAULT_MERGE_RADIUS,
            detector_sigma: 2.0,
            cell_threshold: CELL_THRESHOLD,
            patient_threshold: PATIENT_THRESHOLD,
            partitions: 4,
        }
    }
}

impl Config {
    pub fn qc(&self) -> &QcParams {
        &self.pipeline.qc
    }

    /// Defaults with every `key = value` line of `text` applied in order.
    pub fn from_overrides(text: &str) -> std::result::Result<Self, String> {
        let mut tree = serde_json::to_value(Config::default()).expect("config serializes");
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
            let mut slot = &mut tree;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| format!("line {}: unknown key '{key}'", n + 1))?;
            }
            *slot = parsed;
        }
        serde_json::from_value(tree).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_overrides(&text).map_err(|m| Error::format(path, m))
    }
}
