//! Flat-field correction of fluorescence channels: subtract a wide Gaussian
//! low-pass, then stretch linearly to `[0, 1]` with bright pixels saturating
//! at four times the 99th percentile.

use rayon::prelude::*;

use crate::error::Result;
use crate::image::{gaussian_filter, percentile_of_sorted, MultiChannelImage, Plane};
use crate::scalar::Real;

/// Low-pass width as a fraction of the longer image side.
pub const SIGMA_FRACTION: f64 = 0.10;
/// Saturation cap as a multiple of the 99th percentile.
pub const CAP_MULTIPLIER: f64 = 4.0;
pub const CAP_QUANTILE: f64 = 0.99;

/// Range below this (relative to the input magnitude) counts as flat.
const FLAT_REL_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CorrectedPlane<T> {
    pub plane: Plane<T>,
    /// Set when the stretch range collapsed; the plane is then all zeros.
    pub low_contrast: bool,
}

pub fn correct_channel<T: Real>(p: &Plane<T>) -> Result<CorrectedPlane<T>> {
    if p.is_empty() {
        return Err(crate::Error::EmptyPlane);
    }
    let sigma = SIGMA_FRACTION * p.height().max(p.width()) as f64;
    let src: Plane<f64> = p.cast();
    let low = gaussian_filter(&src, sigma)?;
    let d: Vec<f64> = src.as_slice().iter().zip(low.as_slice()).map(|(a, b)| a - b).collect();

    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[0];
    let cap = CAP_MULTIPLIER * percentile_of_sorted(&sorted, CAP_QUANTILE);
    let magnitude = src.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));

    if !(cap - floor > FLAT_REL_EPS * magnitude) || magnitude == 0.0 {
        return Ok(CorrectedPlane {
            plane: Plane::zeros(p.height(), p.width()).with_pixel_size(p.pixel_size_um()),
            low_contrast: true,
        });
    }
    let span = cap - floor;
    let out = d.iter().map(|&v| T::of(((v - floor) / span).clamp(0.0, 1.0))).collect();
    Ok(CorrectedPlane {
        plane: Plane::new(p.height(), p.width(), out, p.pixel_size_um())?,
        low_contrast: false,
    })
}

/// Corrects every channel independently, in channel order. Returns the
/// image and the per-channel low-contrast flags.
pub fn correct_image<T: Real>(img: &MultiChannelImage<T>) -> Result<(MultiChannelImage<T>, Vec<bool>)> {
    let results = img
        .channels()
        .par_iter()
        .map(correct_channel)
        .collect::<Result<Vec<_>>>()?;
    let flags = results.iter().map(|r| r.low_contrast).collect();
    let channels = results.into_iter().map(|r| r.plane).collect();
    let out = MultiChannelImage::with_names(img.modality(), channels, img.channel_names().to_vec())?;
    Ok((out, flags))
}
