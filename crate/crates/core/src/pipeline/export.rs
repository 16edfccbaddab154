use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PatchPair, QcFlag};
use crate::dataset::Label;
use crate::error::Result;
use crate::image::{Modality, MultiChannelImage};
use crate::io::{read_image_tiff, read_jsonl, write_image_tiff, write_jsonl};
use crate::scalar::Real;

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub patient_id: String,
    pub slide_id: String,
    pub label: Option<Label>,
    pub bf_path: PathBuf,
    pub fl_path: PathBuf,
    pub refine_dy: i64,
    pub refine_dx: i64,
    pub mi_nats: f64,
    pub focus_bf: usize,
    pub focus_fl: usize,
    pub contrast_fl: f64,
    pub qc_flags: Vec<QcFlag>,
    #[serde(default)]
    pub x_px: f64,
    #[serde(default)]
    pub y_px: f64,
    #[serde(default)]
    pub misalignment_px: usize,
}

impl ManifestRecord {
    pub fn from_pair<T>(p: &PatchPair<T>, bf_path: PathBuf, fl_path: PathBuf) -> Self {
        Self {
            id: p.id.clone(),
            patient_id: p.patient_id.clone(),
            slide_id: p.slide_id.clone(),
            label: p.label,
            bf_path,
            fl_path,
            refine_dy: p.refine_offset.0,
            refine_dx: p.refine_offset.1,
            mi_nats: p.mi_nats,
            focus_bf: p.focus_bf,
            focus_fl: p.focus_fl,
            contrast_fl: p.contrast_fl,
            qc_flags: p.qc_flags.clone(),
            x_px: p.x_px,
            y_px: p.y_px,
            misalignment_px: p.misalignment_px,
        }
    }

    /// Rebuilds the pair by reading its patch files.
    pub fn to_pair(&self, base: &Path) -> Result<PatchPair<f32>> {
        let (bf_patch, fl_patch) = load_pair(self, base)?;
        Ok(PatchPair {
            id: self.id.clone(),
            patient_id: self.patient_id.clone(),
            slide_id: self.slide_id.clone(),
            x_px: self.x_px,
            y_px: self.y_px,
            bf_patch,
            fl_patch,
            refine_offset: (self.refine_dy, self.refine_dx),
            mi_nats: self.mi_nats,
            focus_bf: self.focus_bf,
            focus_fl: self.focus_fl,
            contrast_fl: self.contrast_fl,
            qc_flags: self.qc_flags.clone(),
            label: self.label,
            misalignment_px: self.misalignment_px,
        })
    }
}

/// Writes `patches/<id>_bf.tif` and `patches/<id>_fl.tif` under `out_dir`
/// for every pair and returns the manifest records in input order.
pub fn export_pairs<T: Real>(pairs: &[PatchPair<T>], out_dir: &Path) -> Result<Vec<ManifestRecord>> {
    pairs
        .par_iter()
        .map(|p| {
            let bf = PathBuf::from("patches").join(format!("{}_bf.tif", p.id));
            let fl = PathBuf::from("patches").join(format!("{}_fl.tif", p.id));
            write_image_tiff(&out_dir.join(&bf), &p.bf_patch)?;
            write_image_tiff(&out_dir.join(&fl), &p.fl_patch)?;
            Ok(ManifestRecord::from_pair(p, bf, fl))
        })
        .collect()
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    read_jsonl(path)
}

pub fn load_pair(r: &ManifestRecord, base: &Path) -> Result<(MultiChannelImage<f32>, MultiChannelImage<f32>)> {
    Ok((read_image_tiff(&base.join(&r.bf_path), Modality::Bf)?, read_image_tiff(&base.join(&r.fl_path), Modality::Fl)?))
}
