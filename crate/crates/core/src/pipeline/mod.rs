//! Per-nucleus BF/FL patch extraction: BF cut-out, rigid mapping into the
//! FL slide, local translation refinement, focus selection in both
//! modalities, then slide-level QC and export.

mod export;
mod qc;

pub use export::{export_pairs, load_pair, read_manifest, write_manifest, ManifestRecord};
pub use qc::{qc_filter, QcParams, QcReport};

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::focus::{contrast_score, pick_best, lap2_score, DEFAULT_CENTER_SIGMA};
use crate::image::{resample_rigid_window, MultiChannelImage, ZStack};
use crate::peaks::NucleusRecord;
use crate::registration::{reduce_for_registration, refine_translation, RefineParams};
use crate::scalar::Real;
use crate::transform::RigidTransform2D;

pub const PATCH_SIZE: usize = 256;
/// FL search window cut at the middle z-level, in FL pixels.
pub const FL_WINDOW: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QcFlag {
    LowContrast,
    FailedRegistration,
    NeighborInconsistent,
    Border,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub patch_size: usize,
    pub fl_window: usize,
    pub refine: RefineParams,
    pub center_sigma: f64,
    pub qc: QcParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            patch_size: PATCH_SIZE,
            fl_window: FL_WINDOW,
            refine: RefineParams::default(),
            center_sigma: DEFAULT_CENTER_SIGMA,
            qc: QcParams::default(),
        }
    }
}

/// One nucleus with aligned BF and FL patches at their best focus levels.
#[derive(Clone, Debug)]
pub struct PatchPair<T> {
    pub id: String,
    pub patient_id: String,
    pub slide_id: String,
    /// Nucleus centre in the BF slide.
    pub x_px: f64,
    pub y_px: f64,
    pub bf_patch: MultiChannelImage<T>,
    pub fl_patch: MultiChannelImage<T>,
    pub refine_offset: (i64, i64),
    pub mi_nats: f64,
    pub focus_bf: usize,
    pub focus_fl: usize,
    pub contrast_fl: f64,
    pub qc_flags: Vec<QcFlag>,
    pub label: Option<Label>,
    /// BF shift applied by misalignment injection.
    pub misalignment_px: usize,
}

impl<T> PatchPair<T> {
    pub fn add_flag(&mut self, flag: QcFlag) {
        if let Err(i) = self.qc_flags.binary_search(&flag) {
            self.qc_flags.insert(i, flag);
        }
    }

    pub fn passed(&self) -> bool {
        self.qc_flags.is_empty()
    }
}

/// Integer window origin `(y0, x0)` for a patch of `size` centred on `(x, y)`.
pub fn window_origin(center: (f64, f64), size: usize) -> (i64, i64) {
    let half = (size / 2) as i64;
    (center.1.round() as i64 - half, center.0.round() as i64 - half)
}

/// Same `size x size` window cut from every z-level, top-left at
/// `center - size / 2`.
pub fn extract_patch<T: Real>(stack: &ZStack<T>, center: (f64, f64), size: usize) -> Result<Vec<MultiChannelImage<T>>> {
    let (y0, x0) = window_origin(center, size);
    stack
        .levels()
        .iter()
        .map(|l| l.crop(y0, x0, size, size).ok_or(Error::Border { x: center.0, y: center.1, size }))
        .collect()
}

/// BF slide coordinate to FL slide coordinate; the result must fall inside
/// a `bounds = (height, width)` FL slide.
pub fn map_to_moving(coord: (f64, f64), t: &RigidTransform2D, bounds: (usize, usize)) -> Result<(f64, f64)> {
    let (x, y) = t.apply(coord.0, coord.1);
    let inside = x >= 0.0 && y >= 0.0 && x <= (bounds.1 as f64 - 1.0) && y <= (bounds.0 as f64 - 1.0);
    if inside {
        Ok((x, y))
    } else {
        Err(Error::OutOfMovingBounds { x, y })
    }
}

fn best_level<T: Real>(levels: &[MultiChannelImage<T>], sigma: f64) -> Result<usize> {
    let scores = levels
        .iter()
        .map(|l| lap2_score(&reduce_for_registration(l), sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(pick_best(&scores).index)
}

/// Slide-level context shared by every nucleus of one slide pair.
pub struct SlidePair<'a, T> {
    pub slide_id: &'a str,
    pub patient_id: &'a str,
    pub bf: &'a ZStack<T>,
    pub fl: &'a ZStack<T>,
    /// BF frame to FL frame.
    pub transform: &'a RigidTransform2D,
}

/// Runs the per-nucleus chain. Border problems are errors (the nucleus is
/// skipped); a refinement without usable contrast yields a pair flagged
/// `FailedRegistration` whose FL patch sits at the unrefined position.
pub fn process_nucleus<T: Real>(
    n: &NucleusRecord,
    id: String,
    slides: &SlidePair<'_, T>,
    cfg: &PipelineConfig,
) -> Result<PatchPair<T>> {
    let size = cfg.patch_size;
    let center = (n.x_px, n.y_px);
    let t = slides.transform;

    let bf_levels = extract_patch(slides.bf, center, size)?;
    let focus_bf = best_level(&bf_levels, cfg.center_sigma)?;
    let bf_patch = bf_levels.into_iter().nth(focus_bf).expect("focus index in range");

    let fl_bounds = (slides.fl.height(), slides.fl.width());
    let border = || Error::Border { x: n.x_px, y: n.y_px, size: cfg.fl_window };
    let fl_center = map_to_moving(center, t, fl_bounds).map_err(|_| border())?;
    let mid = &slides.fl.levels()[slides.fl.middle_index()];
    let (fy0, fx0) = window_origin(fl_center, cfg.fl_window);
    let fl_window = mid.crop(fy0, fx0, cfg.fl_window, cfg.fl_window).ok_or_else(border)?;
    let fl_reduced = reduce_for_registration(&fl_window);

    // FL window resampled onto the BF grid around the patch, `radius`
    // pixels of margin on every side.
    let radius = cfg.refine.radius;
    let (by0, bx0) = window_origin(center, size);
    let (oy, ox) = ((by0 - radius as i64) as f64, (bx0 - radius as i64) as f64);
    let local = shift_moving_origin(t, (fx0 as f64, fy0 as f64));
    let region = resample_rigid_window(&fl_reduced, &local, (oy, ox), size + 2 * radius, size + 2 * radius)?;
    let bf_reduced = reduce_for_registration(&bf_patch);

    let mut flags = Vec::new();
    let (refine_offset, mi_nats) = match refine_translation(&bf_reduced, &region.plane, Some(&region.mask), &cfg.refine) {
        Ok(r) => (r.offset, r.mi_nats),
        Err(Error::LowContrast(_)) => {
            flags.push(QcFlag::FailedRegistration);
            ((0, 0), 0.0)
        }
        Err(Error::NoValidOverlap(_)) => {
            flags.push(QcFlag::FailedRegistration);
            ((0, 0), 0.0)
        }
        Err(e) => return Err(e),
    };

    // FL patches on the BF grid, shifted by the refined offset.
    let (py, px) = ((by0 + refine_offset.0) as f64, (bx0 + refine_offset.1) as f64);
    let fl_levels = slides
        .fl
        .levels()
        .iter()
        .map(|level| {
            let channels = level
                .channels()
                .iter()
                .map(|c| {
                    let r = resample_rigid_window(c, t, (py, px), size, size)?;
                    if r.valid_count() != size * size {
                        return Err(border());
                    }
                    Ok(r.plane.with_pixel_size(bf_patch.pixel_size_um()))
                })
                .collect::<Result<Vec<_>>>()?;
            MultiChannelImage::with_names(level.modality(), channels, level.channel_names().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let focus_fl = best_level(&fl_levels, cfg.center_sigma)?;
    let fl_patch = fl_levels.into_iter().nth(focus_fl).expect("focus index in range");
    let contrast_fl = contrast_score(&fl_patch, cfg.center_sigma)?;

    Ok(PatchPair {
        id,
        patient_id: slides.patient_id.to_string(),
        slide_id: slides.slide_id.to_string(),
        x_px: n.x_px,
        y_px: n.y_px,
        bf_patch,
        fl_patch,
        refine_offset,
        mi_nats,
        focus_bf,
        focus_fl,
        contrast_fl,
        qc_flags: flags,
        label: None,
        misalignment_px: 0,
    })
}

/// `t` re-expressed for a moving image cropped at `origin = (x, y)`.
fn shift_moving_origin(t: &RigidTransform2D, origin: (f64, f64)) -> RigidTransform2D {
    RigidTransform2D {
        tx_px: t.tx_px - t.scale * origin.0,
        ty_px: t.ty_px - t.scale * origin.1,
        ..*t
    }
}

/// Outcome of running every nucleus of one slide.
#[derive(Debug)]
pub struct ProcessedSlide<T> {
    pub pairs: Vec<PatchPair<T>>,
    /// Nuclei skipped at the slide border.
    pub border: usize,
}

/// Processes nuclei in parallel; ids follow input order, so the result is
/// independent of scheduling.
pub fn process_slide<T: Real>(
    nuclei: &[NucleusRecord],
    slides: &SlidePair<'_, T>,
    cfg: &PipelineConfig,
) -> Result<ProcessedSlide<T>> {
    use rayon::prelude::*;
    let results: Vec<Result<PatchPair<T>>> = nuclei
        .par_iter()
        .enumerate()
        .map(|(i, n)| process_nucleus(n, format!("{}_{i:06}", slides.slide_id), slides, cfg))
        .collect();
    let mut pairs = Vec::with_capacity(results.len());
    let mut border = 0;
    for r in results {
        match r {
            Ok(p) => pairs.push(p),
            Err(Error::Border { .. }) => border += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(ProcessedSlide { pairs, border })
}
