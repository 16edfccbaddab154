//! Patient labels, partition and fold planning, misalignment injection and
//! the synthetic slide-pair generator.

mod cohort;
mod folds;
mod misalign;
mod phantom;

pub use cohort::{reference_cohort, reference_partition_map, CohortPatient};
pub use folds::{make_folds, plan_partitions, Fold, FoldPlan, PartitionStats, Phase};
pub use misalign::{inject_misalignment, MISALIGNMENT_SWEEP};
pub use phantom::{synth_phantom, Phantom, PhantomNucleus, PhantomSpec, PhantomTruth};

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{ManifestRecord, PatchPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagnosis {
    Cancer,
    Healthy,
}

impl Diagnosis {
    pub fn label(self) -> Label {
        match self {
            Diagnosis::Cancer => Label::Positive,
            Diagnosis::Healthy => Label::Negative,
        }
    }
}

impl std::str::FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cancer" => Ok(Diagnosis::Cancer),
            "healthy" => Ok(Diagnosis::Healthy),
            other => Err(Error::InvalidArgument(format!("unknown diagnosis '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub diagnosis: Diagnosis,
    #[serde(default)]
    pub slide_ids: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
}

/// Anything carrying a patient id and a label slot.
pub trait Labelled {
    fn patient_id(&self) -> &str;
    fn set_label(&mut self, label: Label);
}

impl Labelled for ManifestRecord {
    fn patient_id(&self) -> &str {
        &self.patient_id
    }
    fn set_label(&mut self, label: Label) {
        self.label = Some(label);
    }
}

impl<T> Labelled for PatchPair<T> {
    fn patient_id(&self) -> &str {
        &self.patient_id
    }
    fn set_label(&mut self, label: Label) {
        self.label = Some(label);
    }
}

/// Every item inherits its patient's diagnosis.
pub fn assign_labels<R: Labelled>(items: &mut [R], patients: &[PatientRecord]) -> Result<LabelCounts> {
    let by_id: BTreeMap<&str, Diagnosis> = patients.iter().map(|p| (p.patient_id.as_str(), p.diagnosis)).collect();
    // Validate first so a failure leaves the input untouched.
    if let Some(r) = items.iter().find(|r| !by_id.contains_key(r.patient_id())) {
        return Err(Error::UnknownPatient(r.patient_id().to_string()));
    }
    let mut counts = LabelCounts::default();
    for r in items.iter_mut() {
        let label = by_id[r.patient_id()].label();
        match label {
            Label::Positive => counts.positive += 1,
            Label::Negative => counts.negative += 1,
        }
        r.set_label(label);
    }
    Ok(counts)
}

/// `patient_id,diagnosis[,slide_ids]` with slide ids separated by `;`.
pub fn read_patients_csv(path: &Path) -> Result<Vec<PatientRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("patient_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0].is_empty() {
            return Err(Error::format(path, format!("line {}: expected patient_id,diagnosis", n + 1)));
        }
        let diagnosis = cols[1].parse().map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        let slide_ids = cols.get(2).map(|s| s.split(';').filter(|s| !s.is_empty()).map(String::from).collect()).unwrap_or_default();
        out.push(PatientRecord { patient_id: cols[0].to_string(), diagnosis, slide_ids });
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = out.iter().find(|p| !seen.insert(p.patient_id.clone())) {
        return Err(Error::format(path, format!("patient '{}' listed twice", dup.patient_id)));
    }
    Ok(out)
}

pub fn write_patients_csv(path: &Path, patients: &[PatientRecord]) -> Result<()> {
    let mut s = String::from("patient_id,diagnosis\n");
    for p in patients {
        let d = match p.diagnosis {
            Diagnosis::Cancer => "cancer",
            Diagnosis::Healthy => "healthy",
        };
        s.push_str(&format!("{},{d}\n", p.patient_id));
    }
    crate::io::write_atomic(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, patient: &str) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            patient_id: patient.into(),
            slide_id: "s".into(),
            label: None,
            bf_path: "a".into(),
            fl_path: "b".into(),
            refine_dy: 0,
            refine_dx: 0,
            mi_nats: 0.0,
            focus_bf: 0,
            focus_fl: 0,
            contrast_fl: 0.0,
            qc_flags: vec![],
            x_px: 0.0,
            y_px: 0.0,
            misalignment_px: 0,
        }
    }

    fn patients() -> Vec<PatientRecord> {
        vec![
            PatientRecord { patient_id: "c1".into(), diagnosis: Diagnosis::Cancer, slide_ids: vec![] },
            PatientRecord { patient_id: "h1".into(), diagnosis: Diagnosis::Healthy, slide_ids: vec![] },
        ]
    }

    #[test]
    fn labels_follow_diagnosis() {
        let mut m = vec![rec("a", "c1"), rec("b", "h1"), rec("c", "c1")];
        let counts = assign_labels(&mut m, &patients()).unwrap();
        assert_eq!(counts, LabelCounts { positive: 2, negative: 1 });
        assert_eq!(m[0].label, Some(Label::Positive));
        assert_eq!(m[1].label, Some(Label::Negative));
    }

    #[test]
    fn empty_and_unknown() {
        let mut empty: Vec<ManifestRecord> = vec![];
        assert_eq!(assign_labels(&mut empty, &patients()).unwrap(), LabelCounts::default());
        let mut m = vec![rec("a", "c1"), rec("b", "zz")];
        assert!(matches!(assign_labels(&mut m, &patients()), Err(Error::UnknownPatient(p)) if p == "zz"));
        assert_eq!(m[0].label, None);
    }

    #[test]
    fn patients_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_patients_csv(&path, &patients()).unwrap();
        assert_eq!(read_patients_csv(&path).unwrap(), patients());
        std::fs::write(&path, "patient_id,diagnosis\nx,maybe\n").unwrap();
        assert!(read_patients_csv(&path).is_err());
    }
}
