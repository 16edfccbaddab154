use num_complex::Complex;
use rustfft::FftPlanner;

use super::Plane;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Kernels longer than this are applied through an FFT per line.
const DIRECT_KERNEL_MAX: usize = 129;

/// Sampled, normalized Gaussian truncated at 4 sigma (radius at least 1).
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let radius = ((4.0 * sigma).ceil() as usize).max(1);
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Half-sample symmetric index folding (`d c b a | a b c d | d c b a`),
/// valid for any offset, including kernels wider than the line.
#[inline]
pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m < n {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian blur with reflect padding; geometry is preserved.
pub fn gaussian_filter<T: Real>(p: &Plane<T>, sigma: f64) -> Result<Plane<T>> {
    let kernel = gaussian_kernel(sigma)?;
    let (h, w) = (p.height(), p.width());
    if p.is_empty() {
        return Ok(p.clone());
    }
    let mut buf: Vec<f64> = p.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
    convolve_rows(&mut buf, h, w, &kernel);
    let mut t = transpose(&buf, h, w);
    convolve_rows(&mut t, w, h, &kernel);
    let out = transpose(&t, w, h);
    Plane::new(h, w, out.into_iter().map(T::of).collect(), p.pixel_size_um())
}

fn transpose(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    const B: usize = 32;
    for yb in (0..h).step_by(B) {
        for xb in (0..w).step_by(B) {
            for y in yb..(yb + B).min(h) {
                for x in xb..(xb + B).min(w) {
                    out[x * h + y] = src[y * w + x];
                }
            }
        }
    }
    out
}

fn convolve_rows(buf: &mut [f64], rows: usize, len: usize, kernel: &[f64]) {
    if kernel.len() > DIRECT_KERNEL_MAX {
        convolve_rows_fft(buf, rows, len, kernel);
        return;
    }
    let radius = kernel.len() / 2;
    let mut padded = vec![0.0; len + 2 * radius];
    for r in 0..rows {
        let line = &mut buf[r * len..(r + 1) * len];
        for (i, slot) in padded.iter_mut().enumerate() {
            *slot = line[reflect_index(i as i64 - radius as i64, len)];
        }
        for (x, out) in line.iter_mut().enumerate() {
            *out = padded[x..x + kernel.len()]
                .iter()
                .zip(kernel)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

fn convolve_rows_fft(buf: &mut [f64], rows: usize, len: usize, kernel: &[f64]) {
    let radius = kernel.len() / 2;
    let padded_len = len + 2 * radius;
    let n = (padded_len + kernel.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut kspec = vec![Complex::new(0.0, 0.0); n];
    for (i, &k) in kernel.iter().enumerate() {
        kspec[i] = Complex::new(k, 0.0);
    }
    fwd.process(&mut kspec);

    // Two real lines per complex transform.
    let mut work = vec![Complex::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    let mut r = 0;
    while r < rows {
        let pair = r + 1 < rows;
        work.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..padded_len {
            let src = reflect_index(i as i64 - radius as i64, len);
            let re = buf[r * len + src];
            let im = if pair { buf[(r + 1) * len + src] } else { 0.0 };
            work[i] = Complex::new(re, im);
        }
        fwd.process(&mut work);
        for (w, k) in work.iter_mut().zip(&kspec) {
            *w *= k;
        }
        inv.process(&mut work);
        // Full convolution index x + 2*radius corresponds to output pixel x.
        for x in 0..len {
            let c = work[x + 2 * radius] * scale;
            buf[r * len + x] = c.re;
            if pair {
                buf[(r + 1) * len + x] = c.im;
            }
        }
        r += 2;
    }
}
