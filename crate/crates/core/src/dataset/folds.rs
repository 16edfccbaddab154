use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Diagnosis, PatientRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    InitialValidation,
    FullTraining,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_partitions: Vec<usize>,
    pub val_partition: Option<usize>,
    pub test_partition: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub partition: usize,
    pub cancer_patients: usize,
    pub healthy_patients: usize,
    pub cancer_patches: usize,
    pub healthy_patches: usize,
    pub total_patches: usize,
    pub cancer_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_partitions: usize,
    pub partition_of_patient: BTreeMap<String, usize>,
    pub phase: Option<Phase>,
    pub folds: Vec<Fold>,
    pub stats: Vec<PartitionStats>,
    pub warnings: Vec<String>,
}

impl FoldPlan {
    pub fn patients_in(&self, partition: usize) -> Vec<&str> {
        self.partition_of_patient
            .iter()
            .filter(|(_, &p)| p == partition)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Patient ids per role: `(train, val, test)`.
    pub fn roles(&self, fold: &Fold) -> (Vec<&str>, Vec<&str>, Vec<&str>) {
        let collect = |parts: &[usize]| parts.iter().flat_map(|&p| self.patients_in(p)).collect::<Vec<_>>();
        (
            collect(&fold.train_partitions),
            fold.val_partition.map(|v| self.patients_in(v)).unwrap_or_default(),
            self.patients_in(fold.test_partition),
        )
    }

    /// Fills `folds` for `phase`.
    pub fn with_phase(mut self, phase: Phase) -> Result<Self> {
        self.folds = make_folds(&self, phase)?;
        self.phase = Some(phase);
        Ok(self)
    }
}

/// Assigns every patient to one partition. With `explicit`, the mapping is
/// taken as is. Otherwise cancer patients are dealt out in snake order by
/// decreasing patch count, then each healthy patient (largest first) joins
/// the partition with the fewest patches so far.
pub fn plan_partitions(
    patients: &[PatientRecord],
    patch_counts: &BTreeMap<String, usize>,
    n_partitions: usize,
    explicit: Option<&BTreeMap<String, usize>>,
) -> Result<FoldPlan> {
    if n_partitions == 0 {
        return Err(Error::BadPartitionCount(0));
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in patients {
        if !seen.insert(p.patient_id.as_str()) {
            return Err(Error::InvalidArgument(format!("patient '{}' listed twice", p.patient_id)));
        }
    }
    let count = |id: &str| patch_counts.get(id).copied().unwrap_or(0);
    let mut warnings = Vec::new();
    let partition_of_patient: BTreeMap<String, usize> = match explicit {
        Some(map) => {
            for p in patients {
                match map.get(&p.patient_id) {
                    None => return Err(Error::InvalidArgument(format!("partition map misses patient '{}'", p.patient_id))),
                    Some(&k) if k >= n_partitions => {
                        return Err(Error::InvalidArgument(format!("patient '{}' mapped to partition {k}", p.patient_id)))
                    }
                    Some(_) => {}
                }
            }
            if let Some(extra) = map.keys().find(|k| !seen.contains(k.as_str())) {
                return Err(Error::UnknownPatient(extra.clone()));
            }
            map.clone()
        }
        None => {
            let by_size = |d: Diagnosis| {
                let mut v: Vec<&PatientRecord> = patients.iter().filter(|p| p.diagnosis == d).collect();
                v.sort_by(|a, b| count(&b.patient_id).cmp(&count(&a.patient_id)).then(a.patient_id.cmp(&b.patient_id)));
                v
            };
            let cancer = by_size(Diagnosis::Cancer);
            if cancer.len() < n_partitions {
                warnings.push(format!(
                    "infeasible balance: {} cancer patients for {n_partitions} partitions",
                    cancer.len()
                ));
            }
            let mut map = BTreeMap::new();
            let mut totals = vec![0usize; n_partitions];
            for (i, p) in cancer.iter().enumerate() {
                let round = i / n_partitions;
                let k = if round % 2 == 0 { i % n_partitions } else { n_partitions - 1 - i % n_partitions };
                totals[k] += count(&p.patient_id);
                map.insert(p.patient_id.clone(), k);
            }
            for p in by_size(Diagnosis::Healthy) {
                let k = (0..n_partitions).min_by_key(|&k| (totals[k], k)).expect("n_partitions > 0");
                totals[k] += count(&p.patient_id);
                map.insert(p.patient_id.clone(), k);
            }
            map
        }
    };

    let diag: BTreeMap<&str, Diagnosis> = patients.iter().map(|p| (p.patient_id.as_str(), p.diagnosis)).collect();
    let stats = (0..n_partitions)
        .map(|k| {
            let mut s = PartitionStats {
                partition: k,
                cancer_patients: 0,
                healthy_patients: 0,
                cancer_patches: 0,
                healthy_patches: 0,
                total_patches: 0,
                cancer_ratio: 0.0,
            };
            for (id, _) in partition_of_patient.iter().filter(|(_, &p)| p == k) {
                let c = count(id);
                match diag[id.as_str()] {
                    Diagnosis::Cancer => {
                        s.cancer_patients += 1;
                        s.cancer_patches += c;
                    }
                    Diagnosis::Healthy => {
                        s.healthy_patients += 1;
                        s.healthy_patches += c;
                    }
                }
            }
            s.total_patches = s.cancer_patches + s.healthy_patches;
            if s.total_patches > 0 {
                s.cancer_ratio = s.cancer_patches as f64 / s.total_patches as f64;
            }
            s
        })
        .collect();
    Ok(FoldPlan { n_partitions, partition_of_patient, phase: None, folds: vec![], stats, warnings })
}

/// Three folds; fold `i` tests on partition `i + 1`. Partition 0 is the
/// common validation set in the first phase and joins training in the
/// second.
pub fn make_folds(plan: &FoldPlan, phase: Phase) -> Result<Vec<Fold>> {
    if plan.n_partitions != 4 {
        return Err(Error::BadPartitionCount(plan.n_partitions));
    }
    Ok((1..4)
        .map(|test| {
            let others: Vec<usize> = (1..4).filter(|&p| p != test).collect();
            let (train_partitions, val_partition) = match phase {
                Phase::InitialValidation => (others, Some(0)),
                Phase::FullTraining => (std::iter::once(0).chain(others).collect(), None),
            };
            Fold { index: test - 1, train_partitions, val_partition, test_partition: test }
        })
        .collect())
}
