//! Centre-weighted modified Laplacian focus measure and best-level
//! selection over z-stacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{MultiChannelImage, Plane, ZStack};
use crate::registration::reduce_for_registration;
use crate::scalar::Real;

/// Gaussian weight width for 256 px patches (nucleus in the central quarter).
pub const DEFAULT_CENTER_SIGMA: f64 = 64.0;

/// Scores at or below this count as "no structure at all".
const FLAT_SCORE: f64 = 1e-12;

/// Weighted mean of `|2p - p_left - p_right| + |2p - p_up - p_down|` over
/// interior pixels, with a Gaussian weight of width `center_sigma` centred
/// on the patch.
pub fn lap2_score<T: Real>(p: &Plane<T>, center_sigma: f64) -> Result<f64> {
    let (h, w) = (p.height(), p.width());
    if h < 3 || w < 3 {
        return Err(Error::TooSmall { height: h, width: w });
    }
    if !(center_sigma > 0.0) {
        return Err(Error::NonPositiveSigma(center_sigma));
    }
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let inv = 1.0 / (2.0 * center_sigma * center_sigma);
    let wx: Vec<f64> = (0..w).map(|x| (-(x as f64 - cx).powi(2) * inv).exp()).collect();
    let at = |y: usize, x: usize| p[(y, x)].to_f64_lossy();

    let mut num = 0.0;
    let mut den = 0.0;
    for y in 1..h - 1 {
        let wy = (-(y as f64 - cy).powi(2) * inv).exp();
        for x in 1..w - 1 {
            let c = 2.0 * at(y, x);
            let ml = (c - at(y, x - 1) - at(y, x + 1)).abs() + (c - at(y - 1, x) - at(y + 1, x)).abs();
            let weight = wy * wx[x];
            num += weight * ml;
            den += weight;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusSelection {
    pub index: usize,
    pub score: f64,
    pub scores: Vec<f64>,
    /// Every level scored zero; `index` is then the middle level.
    pub low_contrast: bool,
}

/// Picks the sharpest level. Ties go to the level nearest the middle, then
/// to the lower index.
pub fn select_best_focus<T: Real>(z: &ZStack<T>, center_sigma: f64) -> Result<FocusSelection> {
    let scores = z
        .levels()
        .iter()
        .map(|l| lap2_score(&reduce_for_registration(l), center_sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(pick_best(&scores))
}

/// Tie-breaking argmax shared by every stack scorer.
pub fn pick_best(scores: &[f64]) -> FocusSelection {
    assert!(!scores.is_empty(), "focus selection on an empty stack");
    let mid = (scores.len() - 1) / 2;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= FLAT_SCORE {
        return FocusSelection { index: mid, score: scores[mid], scores: scores.to_vec(), low_contrast: true };
    }
    let tol = 1e-12 * max.abs();
    let index = (0..scores.len())
        .filter(|&i| (scores[i] - max).abs() <= tol)
        .min_by_key(|&i| (i.abs_diff(mid), i))
        .expect("at least one maximum");
    FocusSelection { index, score: scores[index], scores: scores.to_vec(), low_contrast: false }
}

/// FL contrast used by QC: the focus measure of the reduced patch.
pub fn contrast_score<T: Real>(patch: &MultiChannelImage<T>, center_sigma: f64) -> Result<f64> {
    lap2_score(&reduce_for_registration(patch), center_sigma)
}
