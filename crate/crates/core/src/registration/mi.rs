//! Mutual information over all integer translations.
//!
//! For an offset `d`, fixed pixel `x` is paired with moving pixel
//! `x + base + d`. Joint counts `c_ij(d)` come either from FFT
//! cross-correlation of per-level indicator planes or from direct
//! histogramming; both produce exact integer counts, so the resulting MI
//! values agree to rounding.

use super::fft::{next_fast_len, unpack_real_pair, Fft2, C64};
use super::quantize::LabelPlane;
use crate::error::{Error, Result};

/// How joint counts are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CountMethod {
    /// Pick whichever of the two is cheaper for the problem size.
    #[default]
    Auto,
    Fft,
    Direct,
}

/// Ties in MI within this distance are broken by offset norm.
const TIE_EPS: f64 = 1e-12;

/// MI (nats) and overlap count for every offset in `[-R, R]^2`.
#[derive(Clone, Debug)]
pub struct MiSurface {
    radius: usize,
    base: (i64, i64),
    mi: Vec<f64>,
    overlap: Vec<u64>,
    best: Option<((i64, i64), f64)>,
    degenerate: bool,
}

impl MiSurface {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn base(&self) -> (i64, i64) {
        self.base
    }

    #[inline]
    fn side(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    fn index(&self, dy: i64, dx: i64) -> Option<usize> {
        let r = self.radius as i64;
        if dy.abs() > r || dx.abs() > r {
            return None;
        }
        Some((dy + r) as usize * self.side() + (dx + r) as usize)
    }

    /// MI at `(dy, dx)`; `-inf` where the overlap is below the minimum.
    pub fn mi_at(&self, dy: i64, dx: i64) -> f64 {
        self.index(dy, dx).map_or(f64::NEG_INFINITY, |i| self.mi[i])
    }

    pub fn overlap_at(&self, dy: i64, dx: i64) -> u64 {
        self.index(dy, dx).map_or(0, |i| self.overlap[i])
    }

    /// Iterates `((dy, dx), mi, overlap)` in raster order of offsets.
    pub fn iter(&self) -> impl Iterator<Item = ((i64, i64), f64, u64)> + '_ {
        let r = self.radius as i64;
        let side = self.side();
        (0..self.mi.len()).map(move |i| {
            let dy = (i / side) as i64 - r;
            let dx = (i % side) as i64 - r;
            ((dy, dx), self.mi[i], self.overlap[i])
        })
    }

    /// Best admissible offset, if any offset reached the minimum overlap.
    pub fn best(&self) -> Option<((i64, i64), f64)> {
        self.best
    }

    pub fn best_offset(&self) -> (i64, i64) {
        self.best.map_or((0, 0), |b| b.0)
    }

    pub fn best_mi(&self) -> f64 {
        self.best.map_or(f64::NEG_INFINITY, |b| b.1)
    }

    /// One of the planes has a single label among its valid pixels.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// MI surface for same-frame planes (`base = 0`), counts by the cheaper route.
pub fn mi_surface_translation(
    fixed: &LabelPlane,
    moving: &LabelPlane,
    radius: usize,
    min_overlap: usize,
) -> Result<MiSurface> {
    mi_surface_with(fixed, moving, (0, 0), radius, min_overlap, CountMethod::Auto)
}

pub fn mi_surface_with(
    fixed: &LabelPlane,
    moving: &LabelPlane,
    base: (i64, i64),
    radius: usize,
    min_overlap: usize,
    method: CountMethod,
) -> Result<MiSurface> {
    if fixed.labels().is_empty() || moving.labels().is_empty() {
        return Err(Error::EmptyPlane);
    }
    let degenerate = fixed.distinct_labels() < 2 || moving.distinct_labels() < 2;
    let method = match method {
        CountMethod::Auto => cheaper_method(fixed, moving, base, radius),
        m => m,
    };
    let (mi, overlap) = match method {
        CountMethod::Direct => direct_surface(fixed, moving, base, radius),
        _ => fft_surface(fixed, moving, base, radius),
    };
    let min_overlap = min_overlap.max(1) as u64;
    let mut surface = MiSurface { radius, base, mi, overlap, best: None, degenerate };
    for i in 0..surface.mi.len() {
        if surface.overlap[i] < min_overlap {
            surface.mi[i] = f64::NEG_INFINITY;
        } else if degenerate {
            surface.mi[i] = 0.0;
        }
    }
    surface.best = select_best(&surface);
    Ok(surface)
}

fn select_best(s: &MiSurface) -> Option<((i64, i64), f64)> {
    let mut best: Option<((i64, i64), f64)> = None;
    for (off, mi, _) in s.iter() {
        if mi == f64::NEG_INFINITY {
            continue;
        }
        best = match best {
            None => Some((off, mi)),
            Some((b_off, b_mi)) => {
                if mi > b_mi + TIE_EPS {
                    Some((off, mi))
                } else if (mi - b_mi).abs() <= TIE_EPS {
                    let n_new = off.0 * off.0 + off.1 * off.1;
                    let n_old = b_off.0 * b_off.0 + b_off.1 * b_off.1;
                    // Raster order visits offsets lexicographically, so an
                    // equal-norm later offset never wins.
                    if n_new < n_old {
                        Some((off, mi))
                    } else {
                        Some((b_off, b_mi))
                    }
                } else {
                    Some((b_off, b_mi))
                }
            }
        };
    }
    if s.degenerate {
        // Identically zero MI: the zero offset wins when admissible.
        if s.mi_at(0, 0) != f64::NEG_INFINITY {
            return Some(((0, 0), 0.0));
        }
    }
    best
}

/// MI in nats from a `qf x qm` joint histogram; returns `(mi, total)`.
pub fn mi_from_joint(counts: &[u64], qf: usize, qm: usize) -> (f64, u64) {
    debug_assert_eq!(counts.len(), qf * qm);
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return (0.0, 0);
    }
    let mut a = vec![0u64; qf];
    let mut b = vec![0u64; qm];
    let mut clnc = 0.0;
    for i in 0..qf {
        for j in 0..qm {
            let c = counts[i * qm + j];
            a[i] += c;
            b[j] += c;
            clnc += xlnx(c);
        }
    }
    (finish_mi(clnc, a.iter().map(|&v| xlnx(v)).sum(), b.iter().map(|&v| xlnx(v)).sum(), n), n)
}

#[inline]
fn xlnx(c: u64) -> f64 {
    if c == 0 {
        0.0
    } else {
        let c = c as f64;
        c * c.ln()
    }
}

/// `MI = (sum c ln c - sum a ln a - sum b ln b + N ln N) / N`, clamped at 0.
#[inline]
fn finish_mi(clnc: f64, alna: f64, blnb: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let v = (clnc - alna - blnb + xlnx(n)) / n as f64;
    v.max(0.0)
}

fn cheaper_method(fixed: &LabelPlane, moving: &LabelPlane, base: (i64, i64), radius: usize) -> CountMethod {
    let side = (2 * radius + 1) as f64;
    let direct = side * side * (fixed.height() * fixed.width()) as f64;
    let (ny, nx) = fft_shape(fixed, moving, base, radius);
    let n = (ny * nx) as f64;
    let q = fixed.levels().max(moving.levels()) as f64;
    // Packed transforms: q forward, q^2 / 2 inverse, ~5 n log2 n flops each.
    let fft = (q + q * q / 2.0) * 5.0 * n * n.log2().max(1.0) / 4.0;
    if direct <= fft {
        CountMethod::Direct
    } else {
        CountMethod::Fft
    }
}

fn fft_shape(fixed: &LabelPlane, moving: &LabelPlane, base: (i64, i64), radius: usize) -> (usize, usize) {
    let r = radius as i64;
    let dim = |hf: usize, hm: usize, b: i64| -> usize {
        let kmax = b + r;
        let kmin = b - r;
        let need = [hf as i64 + kmax.max(0), hm as i64 - kmin.min(0), hf as i64, hm as i64]
            .into_iter()
            .max()
            .unwrap_or(1);
        next_fast_len(need.max(1) as usize)
    };
    (dim(fixed.height(), moving.height(), base.0), dim(fixed.width(), moving.width(), base.1))
}

fn direct_surface(fixed: &LabelPlane, moving: &LabelPlane, base: (i64, i64), radius: usize) -> (Vec<f64>, Vec<u64>) {
    let (qf, qm) = (fixed.levels(), moving.levels());
    let r = radius as i64;
    let side = 2 * radius + 1;
    let mut mi = vec![0.0; side * side];
    let mut overlap = vec![0u64; side * side];
    let mut hist = vec![0u64; qf * qm];
    let (fh, fw) = (fixed.height() as i64, fixed.width() as i64);
    let (mh, mw) = (moving.height() as i64, moving.width() as i64);
    let fl = fixed.labels();
    let ml = moving.labels();
    for dy in -r..=r {
        for dx in -r..=r {
            hist.iter_mut().for_each(|c| *c = 0);
            let oy = base.0 + dy;
            let ox = base.1 + dx;
            let y_lo = 0.max(-oy);
            let y_hi = fh.min(mh - oy);
            let x_lo = 0.max(-ox);
            let x_hi = fw.min(mw - ox);
            for y in y_lo..y_hi {
                let frow = (y * fw) as usize;
                let mrow = ((y + oy) * mw) as usize;
                for x in x_lo..x_hi {
                    let fi = frow + x as usize;
                    let mj = mrow + (x + ox) as usize;
                    if fixed.is_valid(fi) && moving.is_valid(mj) {
                        hist[fl[fi] as usize * qm + ml[mj] as usize] += 1;
                    }
                }
            }
            let idx = (dy + r) as usize * side + (dx + r) as usize;
            let (v, n) = mi_from_joint(&hist, qf, qm);
            mi[idx] = v;
            overlap[idx] = n;
        }
    }
    (mi, overlap)
}

/// Indicator plane for `level`, zero-padded into the FFT grid, as real values.
fn indicator(p: &LabelPlane, level: u16, ny: usize, nx: usize) -> Option<Vec<f64>> {
    let mut out = vec![0.0; ny * nx];
    let mut any = false;
    let labels = p.labels();
    for y in 0..p.height() {
        for x in 0..p.width() {
            let i = y * p.width() + x;
            if labels[i] == level && p.is_valid(i) {
                out[y * nx + x] = 1.0;
                any = true;
            }
        }
    }
    any.then_some(out)
}

/// Spectra of all non-empty indicator planes, two per complex transform.
fn level_spectra(fft: &mut Fft2, p: &LabelPlane) -> Vec<Option<Vec<C64>>> {
    let n = fft.len();
    let planes: Vec<Option<Vec<f64>>> = (0..p.levels()).map(|l| indicator(p, l as u16, fft.ny, fft.nx)).collect();
    let present: Vec<usize> = (0..planes.len()).filter(|&l| planes[l].is_some()).collect();
    let mut spectra: Vec<Option<Vec<C64>>> = vec![None; planes.len()];
    for chunk in present.chunks(2) {
        let a = planes[chunk[0]].as_ref().expect("present");
        let b = chunk.get(1).map(|&l| planes[l].as_ref().expect("present"));
        let mut z: Vec<C64> = match b {
            Some(b) => a.iter().zip(b).map(|(&x, &y)| C64::new(x, y)).collect(),
            None => a.iter().map(|&x| C64::new(x, 0.0)).collect(),
        };
        fft.forward(&mut z);
        if b.is_some() {
            let mut sa = vec![C64::new(0.0, 0.0); n];
            let mut sb = vec![C64::new(0.0, 0.0); n];
            unpack_real_pair(fft, &z, &mut sa, &mut sb);
            spectra[chunk[0]] = Some(sa);
            spectra[chunk[1]] = Some(sb);
        } else {
            spectra[chunk[0]] = Some(z);
        }
    }
    spectra
}

fn fft_surface(fixed: &LabelPlane, moving: &LabelPlane, base: (i64, i64), radius: usize) -> (Vec<f64>, Vec<u64>) {
    let (ny, nx) = fft_shape(fixed, moving, base, radius);
    let mut fft = Fft2::new(ny, nx);
    let fspec = level_spectra(&mut fft, fixed);
    let mspec = level_spectra(&mut fft, moving);

    let r = radius as i64;
    let side = 2 * radius + 1;
    let n_off = side * side;
    // Circular index of every requested offset.
    let offsets: Vec<usize> = (0..n_off)
        .map(|i| {
            let dy = (i / side) as i64 - r + base.0;
            let dx = (i % side) as i64 - r + base.1;
            dy.rem_euclid(ny as i64) as usize * nx + dx.rem_euclid(nx as i64) as usize
        })
        .collect();

    let qm = moving.levels();
    let norm = 1.0 / (ny * nx) as f64;
    let mut clnc = vec![0.0; n_off];
    let mut alna = vec![0.0; n_off];
    let mut b_counts = vec![0u64; n_off * qm];
    let mut a_cur = vec![0u64; n_off];
    let mut work = vec![C64::new(0.0, 0.0); ny * nx];

    for fs in fspec.iter() {
        let Some(fs) = fs else { continue };
        a_cur.iter_mut().for_each(|v| *v = 0);
        let js: Vec<usize> = (0..qm).filter(|&j| mspec[j].is_some()).collect();
        for pair in js.chunks(2) {
            let m0 = mspec[pair[0]].as_ref().expect("present");
            let m1 = pair.get(1).map(|&j| mspec[j].as_ref().expect("present"));
            // conj(F) * M0 + i conj(F) * M1: both correlations are real.
            for k in 0..work.len() {
                let f = fs[k].conj();
                let p0 = f * m0[k];
                work[k] = match m1 {
                    Some(m1) => p0 + C64::new(0.0, 1.0) * (f * m1[k]),
                    None => p0,
                };
            }
            fft.inverse(&mut work);
            for (o, &k) in offsets.iter().enumerate() {
                let v = work[k] * norm;
                let c0 = v.re.round().max(0.0) as u64;
                accumulate(c0, o, pair[0], qm, &mut clnc, &mut a_cur, &mut b_counts);
                if pair.len() == 2 {
                    let c1 = v.im.round().max(0.0) as u64;
                    accumulate(c1, o, pair[1], qm, &mut clnc, &mut a_cur, &mut b_counts);
                }
            }
        }
        for o in 0..n_off {
            alna[o] += xlnx(a_cur[o]);
        }
    }

    let mut mi = vec![0.0; n_off];
    let mut overlap = vec![0u64; n_off];
    for o in 0..n_off {
        let bs = &b_counts[o * qm..(o + 1) * qm];
        let n: u64 = bs.iter().sum();
        let blnb: f64 = bs.iter().map(|&v| xlnx(v)).sum();
        overlap[o] = n;
        mi[o] = finish_mi(clnc[o], alna[o], blnb, n);
    }
    (mi, overlap)
}

#[inline]
fn accumulate(c: u64, o: usize, j: usize, qm: usize, clnc: &mut [f64], a_cur: &mut [u64], b: &mut [u64]) {
    if c == 0 {
        return;
    }
    clnc[o] += xlnx(c);
    a_cur[o] += c;
    b[o * qm + j] += c;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Plane;
    use crate::registration::quantize::quantize_equal_count;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight per-offset joint histogram with the textbook MI sum; kept
    /// free of any helper shared with the implementation.
    fn brute_mi(f: &LabelPlane, m: &LabelPlane, base: (i64, i64), dy: i64, dx: i64) -> (f64, u64) {
        let (qf, qm) = (f.levels(), m.levels());
        let mut joint = vec![vec![0u64; qm]; qf];
        let mut n = 0u64;
        for y in 0..f.height() as i64 {
            for x in 0..f.width() as i64 {
                let (Some(a), Some(b)) = (f.valid_label(y, x), m.valid_label(y + base.0 + dy, x + base.1 + dx)) else {
                    continue;
                };
                joint[a as usize][b as usize] += 1;
                n += 1;
            }
        }
        if n == 0 {
            return (0.0, 0);
        }
        let nf = n as f64;
        let pi: Vec<f64> = joint.iter().map(|row| row.iter().sum::<u64>() as f64 / nf).collect();
        let pj: Vec<f64> = (0..qm).map(|j| joint.iter().map(|row| row[j]).sum::<u64>() as f64 / nf).collect();
        let mut mi = 0.0;
        for i in 0..qf {
            for j in 0..qm {
                let p = joint[i][j] as f64 / nf;
                if p > 0.0 {
                    mi += p * (p / (pi[i] * pj[j])).ln();
                }
            }
        }
        (mi, n)
    }

    fn random_labels(h: usize, w: usize, q: usize, rng: &mut ChaCha8Rng) -> LabelPlane {
        let p = Plane::<f64>::from_fn(h, w, |_, _| rng.gen());
        quantize_equal_count(&p, q).unwrap().labels
    }

    fn checkerboard(n: usize) -> LabelPlane {
        let labels = (0..n * n).map(|i| (((i / n) + (i % n)) % 2) as u16).collect();
        LabelPlane::new(n, n, labels, 2).unwrap()
    }

    #[test]
    fn checkerboard_self_registration() {
        let c = checkerboard(32);
        for method in [CountMethod::Fft, CountMethod::Direct] {
            let s = mi_surface_with(&c, &c, (0, 0), 4, 1, method).unwrap();
            assert_eq!(s.best_offset(), (0, 0));
            assert!((s.best_mi() - std::f64::consts::LN_2).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_moving_is_degenerate() {
        let c = checkerboard(16);
        let flat = LabelPlane::new(16, 16, vec![0; 256], 2).unwrap();
        let s = mi_surface_translation(&c, &flat, 3, 1).unwrap();
        assert!(s.is_degenerate());
        assert_eq!(s.best_offset(), (0, 0));
        assert!(s.iter().all(|(_, mi, _)| mi == 0.0));
    }

    #[test]
    fn fft_and_direct_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let f = random_labels(32, 32, 4, &mut rng);
        let m = random_labels(32, 32, 4, &mut rng);
        let fft = mi_surface_with(&f, &m, (0, 0), 6, 1, CountMethod::Fft).unwrap();
        let direct = mi_surface_with(&f, &m, (0, 0), 6, 1, CountMethod::Direct).unwrap();
        for ((dy, dx), mi, n) in fft.iter() {
            let (bm, bn) = brute_mi(&f, &m, (0, 0), dy, dx);
            assert_eq!(n, bn);
            assert!((mi - bm).abs() < 1e-9, "({dy},{dx}) {mi} vs {bm}");
            assert!((direct.mi_at(dy, dx) - bm).abs() < 1e-9);
        }
    }

    #[test]
    fn different_sizes_with_base_and_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let f = random_labels(12, 9, 3, &mut rng);
        let raw = random_labels(20, 17, 5, &mut rng);
        let mask: Vec<bool> = (0..raw.labels().len()).map(|_| rng.gen_bool(0.8)).collect();
        let m = LabelPlane::with_mask(20, 17, raw.labels().to_vec(), 5, Some(mask)).unwrap();
        for base in [(4, 4), (0, 0), (-3, 7)] {
            let fft = mi_surface_with(&f, &m, base, 5, 1, CountMethod::Fft).unwrap();
            for ((dy, dx), mi, n) in fft.iter() {
                let (bm, bn) = brute_mi(&f, &m, base, dy, dx);
                assert_eq!(n, bn, "base {base:?} offset ({dy},{dx})");
                if n > 0 {
                    assert!((mi - bm).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn min_overlap_masks_out_offsets() {
        let c = checkerboard(8);
        let s = mi_surface_with(&c, &c, (0, 0), 6, 40, CountMethod::Direct).unwrap();
        // Offset (6, 6) overlaps 2x2 = 4 pixels.
        assert_eq!(s.overlap_at(6, 6), 4);
        assert_eq!(s.mi_at(6, 6), f64::NEG_INFINITY);
        assert!(s.mi_at(0, 0) > 0.0);
    }

    #[test]
    fn relabeling_leaves_mi_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_labels(24, 24, 6, &mut rng);
        let m = random_labels(24, 24, 6, &mut rng);
        let perm = [3u16, 0, 5, 1, 4, 2];
        let s1 = mi_surface_with(&f, &m, (0, 0), 3, 1, CountMethod::Fft).unwrap();
        let s2 = mi_surface_with(&f.relabel(&perm).unwrap(), &m, (0, 0), 3, 1, CountMethod::Fft).unwrap();
        for ((dy, dx), mi, _) in s1.iter() {
            assert!((mi - s2.mi_at(dy, dx)).abs() < 1e-12);
        }
    }
}
