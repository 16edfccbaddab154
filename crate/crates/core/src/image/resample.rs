use super::Plane;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::transform::RigidTransform2D;

const EDGE_EPS: f64 = 1e-9;

/// Output of a rigid resampling: the plane plus which pixels were sampled
/// from inside the source (the rest are zero).
#[derive(Clone, Debug)]
pub struct Resampled<T> {
    pub plane: Plane<T>,
    pub mask: Vec<bool>,
}

impl<T> Resampled<T> {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Bilinear sample at `(x, y)`; `None` outside the pixel-centre hull.
#[inline]
pub(crate) fn bilinear<T: Real>(p: &Plane<T>, x: f64, y: f64) -> Option<f64> {
    let (h, w) = (p.height(), p.width());
    if !(x >= -EDGE_EPS && y >= -EDGE_EPS && x <= (w - 1) as f64 + EDGE_EPS && y <= (h - 1) as f64 + EDGE_EPS) {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, fx) = split(x, w);
    let (y0, fy) = split(y, h);
    let at = |yy: usize, xx: usize| p[(yy, xx)].to_f64_lossy();
    if fx == 0.0 && fy == 0.0 {
        return Some(at(y0, x0));
    }
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

#[inline]
fn split(v: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let i = (v.floor() as usize).min(n - 2);
    (i, v - i as f64)
}

/// Resamples `p` onto an `out_h x out_w` grid: output pixel `(x, y)` takes
/// the bilinear sample of `p` at `t.apply(x, y)`.
pub fn resample_rigid<T: Real>(
    p: &Plane<T>,
    t: &RigidTransform2D,
    out_h: usize,
    out_w: usize,
) -> Result<Resampled<T>> {
    resample_rigid_window(p, t, (0.0, 0.0), out_h, out_w)
}

/// Like [`resample_rigid`] but output pixel `(x, y)` stands for fixed-frame
/// point `(x + origin.1, y + origin.0)`.
pub fn resample_rigid_window<T: Real>(
    p: &Plane<T>,
    t: &RigidTransform2D,
    origin: (f64, f64),
    out_h: usize,
    out_w: usize,
) -> Result<Resampled<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::EmptyOutput);
    }
    t.validate()?;
    if p.is_empty() {
        return Err(Error::EmptyPlane);
    }
    let mut data = Vec::with_capacity(out_h * out_w);
    let mut mask = Vec::with_capacity(out_h * out_w);
    let (s, c) = t.theta_rad.sin_cos();
    let inv_scale = 1.0 / t.scale;
    for y in 0..out_h {
        let fy = y as f64 + origin.0;
        for x in 0..out_w {
            let fx = x as f64 + origin.1;
            let sx = (c * fx - s * fy + t.tx_px) * inv_scale;
            let sy = (s * fx + c * fy + t.ty_px) * inv_scale;
            match bilinear(p, sx, sy) {
                Some(v) => {
                    data.push(T::of(v));
                    mask.push(true);
                }
                None => {
                    data.push(T::zero());
                    mask.push(false);
                }
            }
        }
    }
    let plane = Plane::new(out_h, out_w, data, p.pixel_size_um() / t.scale)?;
    Ok(Resampled { plane, mask })
}
