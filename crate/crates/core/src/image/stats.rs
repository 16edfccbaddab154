use super::Plane;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Linear-interpolated order statistic over all pixels (`q` in `[0, 1]`).
pub fn percentile<T: Real>(p: &Plane<T>, q: f64) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EmptyPlane);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::QOutOfRange(q));
    }
    let mut v: Vec<f64> = p.as_slice().iter().map(|x| x.to_f64_lossy()).collect();
    v.sort_by(f64::total_cmp);
    Ok(percentile_of_sorted(&v, q))
}

/// Same interpolation rule on an already ascending slice.
pub fn percentile_of_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
