use crate::image::{Modality, MultiChannelImage, Plane};
use crate::scalar::Real;

/// Collapses a multi-channel image into the scalar plane used for
/// registration and focus scoring.
///
/// Brightfield is inverted (`1 - mean(RGB) / max`) so stained structure is
/// bright, as in fluorescence; fluorescence is the mean of its channels.
pub fn reduce_for_registration<T: Real>(img: &MultiChannelImage<T>) -> Plane<T> {
    let channels = img.channels();
    let (h, w) = (img.height(), img.width());
    let n = channels.len() as f64;
    let mean: Vec<f64> = (0..h * w)
        .map(|i| channels.iter().map(|c| c.as_slice()[i].to_f64_lossy()).sum::<f64>() / n)
        .collect();
    let data = match img.modality() {
        Modality::Fl => mean,
        Modality::Bf => {
            let max = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max > 0.0 {
                mean.iter().map(|&m| 1.0 - m / max).collect()
            } else {
                vec![0.0; h * w]
            }
        }
    };
    Plane::new(h, w, data.into_iter().map(T::of).collect(), img.pixel_size_um())
        .expect("reduction preserves geometry")
}
