//! Reference cohort: 8 cancer and 11 healthy patients in four partitions
//! with fixed per-partition patch totals. Per-patient counts inside a
//! partition are placeholders that sum to those totals.

use std::collections::BTreeMap;

use super::{Diagnosis, PatientRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct CohortPatient {
    pub record: PatientRecord,
    pub patches: usize,
    pub partition: usize,
}

const TABLE: [(&str, Diagnosis, usize, usize); 19] = [
    ("C01", Diagnosis::Cancer, 21_052, 0),
    ("C02", Diagnosis::Cancer, 19_712, 0),
    ("H01", Diagnosis::Healthy, 52_310, 0),
    ("H02", Diagnosis::Healthy, 48_905, 0),
    ("H03", Diagnosis::Healthy, 48_581, 0),
    ("C03", Diagnosis::Cancer, 18_944, 1),
    ("C04", Diagnosis::Cancer, 20_661, 1),
    ("H04", Diagnosis::Healthy, 47_120, 1),
    ("H05", Diagnosis::Healthy, 50_433, 1),
    ("H06", Diagnosis::Healthy, 47_361, 1),
    ("C05", Diagnosis::Cancer, 22_807, 2),
    ("C06", Diagnosis::Cancer, 19_716, 2),
    ("H07", Diagnosis::Healthy, 71_245, 2),
    ("H08", Diagnosis::Healthy, 76_524, 2),
    ("C07", Diagnosis::Cancer, 23_390, 3),
    ("C08", Diagnosis::Cancer, 21_116, 3),
    ("H09", Diagnosis::Healthy, 55_012, 3),
    ("H10", Diagnosis::Healthy, 49_837, 3),
    ("H11", Diagnosis::Healthy, 51_839, 3),
];

pub fn reference_cohort() -> Vec<CohortPatient> {
    TABLE
        .iter()
        .map(|&(id, diagnosis, patches, partition)| CohortPatient {
            record: PatientRecord { patient_id: id.to_string(), diagnosis, slide_ids: vec![format!("{id}_S1")] },
            patches,
            partition,
        })
        .collect()
}

pub fn reference_partition_map() -> BTreeMap<String, usize> {
    TABLE.iter().map(|&(id, _, _, p)| (id.to_string(), p)).collect()
}
