//! Minimal 2-D complex FFT used for the indicator cross-correlations.
//!
//! Spectra are kept in transposed (column-major) layout: the forward pass
//! does rows, transposes, then rows again, and the inverse undoes it. All
//! spectra in one correlation share the layout, so the extra transposes
//! are never needed.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub(crate) type C64 = Complex<f64>;

/// Smallest `n' >= n` whose prime factors are all in {2, 3, 5, 7}.
pub(crate) fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

pub(crate) struct Fft2 {
    pub ny: usize,
    pub nx: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
    tmp: Vec<C64>,
}

impl Fft2 {
    pub fn new(ny: usize, nx: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(nx);
        let fwd_y = planner.plan_fft_forward(ny);
        let inv_x = planner.plan_fft_inverse(nx);
        let inv_y = planner.plan_fft_inverse(ny);
        let scratch_len = [&fwd_x, &fwd_y, &inv_x, &inv_y]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            ny,
            nx,
            fwd_x,
            fwd_y,
            inv_x,
            inv_y,
            scratch: vec![C64::new(0.0, 0.0); scratch_len],
            tmp: vec![C64::new(0.0, 0.0); ny * nx],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ny * self.nx
    }

    /// Row-major spatial buffer in, transposed spectrum out.
    pub fn forward(&mut self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.len());
        self.fwd_x.process_with_scratch(buf, &mut self.scratch);
        transpose(buf, &mut self.tmp, self.ny, self.nx);
        self.fwd_y.process_with_scratch(&mut self.tmp, &mut self.scratch);
        buf.copy_from_slice(&self.tmp);
    }

    /// Transposed spectrum in, row-major spatial buffer out (unnormalized).
    pub fn inverse(&mut self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.len());
        self.inv_y.process_with_scratch(buf, &mut self.scratch);
        transpose(buf, &mut self.tmp, self.nx, self.ny);
        self.inv_x.process_with_scratch(&mut self.tmp, &mut self.scratch);
        buf.copy_from_slice(&self.tmp);
    }

    /// Index of frequency `(ky, kx)` in the transposed spectrum layout.
    #[inline]
    pub fn spec_index(&self, ky: usize, kx: usize) -> usize {
        kx * self.ny + ky
    }
}

fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    const B: usize = 16;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Splits the spectrum of `a + i b` (both real) into the spectra of `a`
/// and `b`, written into `out_a` and `out_b`.
pub(crate) fn unpack_real_pair(fft: &Fft2, z: &[C64], out_a: &mut [C64], out_b: &mut [C64]) {
    let (ny, nx) = (fft.ny, fft.nx);
    for kx in 0..nx {
        let nkx = (nx - kx) % nx;
        for ky in 0..ny {
            let nky = (ny - ky) % ny;
            let zk = z[fft.spec_index(ky, kx)];
            let zn = z[fft.spec_index(nky, nkx)].conj();
            let idx = fft.spec_index(ky, kx);
            out_a[idx] = (zk + zn) * 0.5;
            // (zk - zn) / 2i
            let d = zk - zn;
            out_b[idx] = C64::new(d.im * 0.5, -d.re * 0.5);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_len() {
        assert_eq!(next_fast_len(350), 350);
        assert_eq!(next_fast_len(351), 360);
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(11), 12);
    }

    #[test]
    fn round_trip_and_pair_unpacking() {
        let (ny, nx) = (6, 10);
        let mut fft = Fft2::new(ny, nx);
        let a: Vec<f64> = (0..ny * nx).map(|i| ((i * 7) % 5) as f64).collect();
        let b: Vec<f64> = (0..ny * nx).map(|i| ((i * 3) % 4) as f64 - 1.0).collect();

        let mut za: Vec<C64> = a.iter().map(|&v| C64::new(v, 0.0)).collect();
        let mut zb: Vec<C64> = b.iter().map(|&v| C64::new(v, 0.0)).collect();
        fft.forward(&mut za);
        fft.forward(&mut zb);

        let mut z: Vec<C64> = a.iter().zip(&b).map(|(&x, &y)| C64::new(x, y)).collect();
        fft.forward(&mut z);
        let mut sa = vec![C64::new(0.0, 0.0); ny * nx];
        let mut sb = sa.clone();
        unpack_real_pair(&fft, &z, &mut sa, &mut sb);
        for i in 0..ny * nx {
            assert!((sa[i] - za[i]).norm() < 1e-9);
            assert!((sb[i] - zb[i]).norm() < 1e-9);
        }

        fft.inverse(&mut za);
        for i in 0..ny * nx {
            assert!((za[i].re / (ny * nx) as f64 - a[i]).abs() < 1e-9);
        }
    }
}
