use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PatchPair, QcFlag};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcParams {
    /// Fraction of each slide's pairs dropped for the lowest FL contrast.
    pub contrast_frac: f64,
    /// Neighbours used for the offset consensus.
    pub k: usize,
    /// Neighbours farther than this (BF px) are ignored.
    pub neighbor_cap_px: f64,
    /// Allowed L-infinity deviation from the neighbours' median offset.
    pub tol_px: f64,
}

impl Default for QcParams {
    fn default() -> Self {
        Self { contrast_frac: 0.05, k: 8, neighbor_cap_px: 2000.0, tol_px: 8.0 }
    }
}

/// Counts per rejection reason. Each rejected pair is counted once, under
/// the first of its flags in the order of the fields below.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcReport {
    pub input: usize,
    pub border: usize,
    pub low_contrast: usize,
    pub failed_registration: usize,
    pub neighbor_inconsistent: usize,
    pub exported: usize,
}

impl QcReport {
    pub fn rejected(&self) -> usize {
        self.border + self.low_contrast + self.failed_registration + self.neighbor_inconsistent
    }

    pub fn merge(&mut self, other: &QcReport) {
        self.input += other.input;
        self.border += other.border;
        self.low_contrast += other.low_contrast;
        self.failed_registration += other.failed_registration;
        self.neighbor_inconsistent += other.neighbor_inconsistent;
        self.exported += other.exported;
    }

    /// Accounts for nuclei dropped at the slide border before QC.
    pub fn add_border(&mut self, n: usize) {
        self.input += n;
        self.border += n;
    }
}

fn median(v: &mut [i64]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Slide-wise QC. Returns the passing pairs and the rejected ones (with
/// their flags set), both in input order, plus the per-reason counts.
pub fn qc_filter<T>(
    pairs: Vec<PatchPair<T>>,
    params: &QcParams,
) -> Result<(Vec<PatchPair<T>>, Vec<PatchPair<T>>, QcReport)> {
    if !(0.0..1.0).contains(&params.contrast_frac) {
        return Err(Error::InvalidArgument(format!("contrast_frac {} outside [0, 1)", params.contrast_frac)));
    }
    let mut pairs = pairs;
    let mut by_slide: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_slide.entry(p.slide_id.as_str()).or_default().push(i);
    }
    let mut new_flags: Vec<(usize, QcFlag)> = Vec::new();
    for idx in by_slide.values() {
        let n = idx.len();
        let drop = (params.contrast_frac * n as f64).floor() as usize;
        let mut order = idx.clone();
        order.sort_by(|&a, &b| pairs[a].contrast_fl.total_cmp(&pairs[b].contrast_fl).then(a.cmp(&b)));
        let low: Vec<usize> = order[..drop].to_vec();
        new_flags.extend(low.iter().map(|&i| (i, QcFlag::LowContrast)));

        let live: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|i| !low.contains(i) && !pairs[*i].qc_flags.contains(&QcFlag::FailedRegistration))
            .collect();
        if params.k == 0 {
            continue;
        }
        let cap2 = params.neighbor_cap_px * params.neighbor_cap_px;
        for &i in &live {
            let p = &pairs[i];
            let mut near: Vec<(f64, usize)> = live
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| ((pairs[j].x_px - p.x_px).powi(2) + (pairs[j].y_px - p.y_px).powi(2), j))
                .filter(|&(d2, _)| d2 <= cap2)
                .collect();
            if near.is_empty() {
                continue;
            }
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(params.k);
            let mut dys: Vec<i64> = near.iter().map(|&(_, j)| pairs[j].refine_offset.0).collect();
            let mut dxs: Vec<i64> = near.iter().map(|&(_, j)| pairs[j].refine_offset.1).collect();
            let (my, mx) = (median(&mut dys), median(&mut dxs));
            let dev = (p.refine_offset.0 as f64 - my).abs().max((p.refine_offset.1 as f64 - mx).abs());
            if dev > params.tol_px {
                new_flags.push((i, QcFlag::NeighborInconsistent));
            }
        }
    }
    for (i, f) in new_flags {
        pairs[i].add_flag(f);
    }

    let mut report = QcReport { input: pairs.len(), ..QcReport::default() };
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for p in pairs {
        match p.qc_flags.first() {
            None => {
                report.exported += 1;
                kept.push(p);
                continue;
            }
            Some(QcFlag::Border) => report.border += 1,
            Some(QcFlag::LowContrast) => report.low_contrast += 1,
            Some(QcFlag::FailedRegistration) => report.failed_registration += 1,
            Some(QcFlag::NeighborInconsistent) => report.neighbor_inconsistent += 1,
        }
        rejected.push(p);
    }
    Ok((kept, rejected, report))
}
