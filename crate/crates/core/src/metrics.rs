//! Cell-level classification metrics and patient-level aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CELL_THRESHOLD: f64 = 0.5;
pub const PATIENT_THRESHOLD: f64 = 0.6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionCounts {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Self { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { tn: self.tn + o.tn, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tp: self.tp + o.tp }
    }
}

/// Counts with `true` meaning positive (cancer).
pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1: f64,
    pub accuracy: f64,
    pub roc_auc: Option<f64>,
    pub recall: f64,
    pub precision: f64,
    /// Metrics whose denominator was zero; they are reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    if c.total() == 0 {
        return Err(Error::EmptyCounts);
    }
    let mut undefined = Vec::new();
    let mut ratio = |name: &str, num: u64, den: u64| {
        if den == 0 {
            undefined.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio("precision", c.tp, c.tp + c.fp);
    let recall = ratio("recall", c.tp, c.tp + c.fn_);
    let f1 = ratio("f1", 2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let accuracy = ratio("accuracy", c.tp + c.tn, c.total());
    Ok(MetricReport { f1, accuracy, roc_auc: None, recall, precision, undefined })
}

/// Probability that a random positive scores above a random negative,
/// ties counting one half (average ranks).
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch(scores.len(), truth.len()));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tie averages integral.
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u128;
        rank2_pos += avg2 * idx[i..=j].iter().filter(|&&k| truth[k]).count() as u128;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    let u2 = rank2_pos - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub n_cells: usize,
    pub n_positive: usize,
    pub ratio: f64,
    pub positive: bool,
}

/// Share of cells scoring above `cell_threshold`; a patient is positive
/// when that share reaches `patient_threshold`.
pub fn aggregate_patient(
    cells: &BTreeMap<String, Vec<f64>>,
    cell_threshold: f64,
    patient_threshold: f64,
) -> Result<Vec<PatientPrediction>> {
    cells
        .iter()
        .map(|(id, scores)| {
            if scores.is_empty() {
                return Err(Error::EmptyPatient(id.clone()));
            }
            let n_positive = scores.iter().filter(|&&s| s > cell_threshold).count();
            let ratio = n_positive as f64 / scores.len() as f64;
            Ok(PatientPrediction { patient_id: id.clone(), n_cells: scores.len(), n_positive, ratio, positive: ratio >= patient_threshold })
        })
        .collect()
}

/// Patient-level confusion against `truth` (patient id to positive).
pub fn patient_confusion(preds: &[PatientPrediction], truth: &BTreeMap<String, bool>) -> Result<ConfusionCounts> {
    let t = preds
        .iter()
        .map(|p| truth.get(&p.patient_id).copied().ok_or_else(|| Error::UnknownPatient(p.patient_id.clone())))
        .collect::<Result<Vec<_>>>()?;
    confusion(&preds.iter().map(|p| p.positive).collect::<Vec<_>>(), &t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One confusion matrix summed over folds.
    Pooled,
    /// Metrics per fold, then mean and population std.
    FoldMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub aggregation: Aggregation,
    pub mean: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<MetricReport>,
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean and population std over fold reports. ROC AUC is summarised only
/// when every fold has one.
pub fn summarize_folds(folds: &[MetricReport]) -> Result<MetricsSummary> {
    if folds.is_empty() {
        return Err(Error::InvalidArgument("no folds to summarise".into()));
    }
    let col = |f: fn(&MetricReport) -> f64| folds.iter().map(f).collect::<Vec<_>>();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f1, acc, rec, pre) = (col(|r| r.f1), col(|r| r.accuracy), col(|r| r.recall), col(|r| r.precision));
    let auc: Option<Vec<f64>> = folds.iter().map(|r| r.roc_auc).collect();
    let mut undefined: Vec<String> = folds.iter().flat_map(|r| r.undefined.iter().cloned()).collect();
    undefined.sort();
    undefined.dedup();
    Ok(MetricsSummary {
        aggregation: Aggregation::FoldMean,
        mean: MetricReport {
            f1: mean(&f1),
            accuracy: mean(&acc),
            roc_auc: auc.as_deref().map(mean),
            recall: mean(&rec),
            precision: mean(&pre),
            undefined,
        },
        std: Some(MetricReport {
            f1: population_std(&f1),
            accuracy: population_std(&acc),
            roc_auc: auc.as_deref().map(population_std),
            recall: population_std(&rec),
            precision: population_std(&pre),
            undefined: vec![],
        }),
        folds: folds.to_vec(),
    })
}

pub const CONFUSION_CSV_HEADER: &str = "model,tn,fp,fn,tp";

pub fn write_confusion_csv(path: &Path, rows: &[(String, ConfusionCounts)]) -> Result<()> {
    let mut s = format!("{CONFUSION_CSV_HEADER}\n");
    for (name, c) in rows {
        s.push_str(&format!("{name},{},{},{},{}\n", c.tn, c.fp, c.fn_, c.tp));
    }
    crate::io::write_atomic(path, s.as_bytes())
}

pub fn read_confusion_csv(path: &Path) -> Result<Vec<(String, ConfusionCounts)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CONFUSION_CSV_HEADER) {
        return Err(Error::format(path, "missing confusion CSV header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.trim().split(',').collect();
            let bad = || Error::format(path, format!("line {}: malformed counts", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let n = |s: &str| s.parse::<u64>().map_err(|_| bad());
            Ok((f[0].to_string(), ConfusionCounts::new(n(f[1])?, n(f[2])?, n(f[3])?, n(f[4])?)))
        })
        .collect()
}
