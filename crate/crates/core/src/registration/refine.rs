use serde::{Deserialize, Serialize};

use super::mi::{mi_surface_with, CountMethod};
use super::quantize::quantize_masked;
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    /// Search radius in fixed pixels around the centred window.
    pub radius: usize,
    pub levels: usize,
    /// Minimum overlap as a fraction of the fixed patch area.
    pub min_overlap_frac: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self { radius: 24, levels: 16, min_overlap_frac: 0.25 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// `(dy, dx)` of the best window relative to the centred one.
    pub offset: (i64, i64),
    pub mi_nats: f64,
}

/// Translation-only MI search of `fixed` inside the larger `moving` region
/// (already resampled onto the fixed pixel grid). Offset `(0, 0)` is the
/// window centred in `moving`.
pub fn refine_translation<T: Real>(
    fixed: &Plane<T>,
    moving: &Plane<T>,
    moving_mask: Option<&[bool]>,
    params: &RefineParams,
) -> Result<Refinement> {
    if moving.height() <= fixed.height() || moving.width() <= fixed.width() {
        return Err(Error::ShapeMismatch(format!(
            "moving region {}x{} must exceed fixed patch {}x{}",
            moving.height(),
            moving.width(),
            fixed.height(),
            fixed.width()
        )));
    }
    let base_y = ((moving.height() - fixed.height()) / 2) as i64;
    let base_x = ((moving.width() - fixed.width()) / 2) as i64;
    // Keep every candidate window inside the region.
    let radius = params.radius.min(base_y as usize).min(base_x as usize);

    let fq = quantize_masked(fixed, None, params.levels)?;
    let mq = quantize_masked(moving, moving_mask, params.levels)?;
    if fq.degenerate || mq.degenerate {
        return Err(Error::LowContrast("refinement region has a single intensity level".into()));
    }
    let min_overlap = (params.min_overlap_frac * fixed.len() as f64).ceil() as usize;
    let surface = mi_surface_with(&fq.labels, &mq.labels, (base_y, base_x), radius, min_overlap, CountMethod::Auto)?;
    let (offset, mi_nats) = surface.best().ok_or(Error::NoValidOverlap(min_overlap))?;
    Ok(Refinement { offset, mi_nats })
}
