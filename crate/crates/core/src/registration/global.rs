use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mi::{mi_surface_with, CountMethod, MiSurface};
use super::quantize::{quantize_equal_count, quantize_masked, LabelPlane};
use crate::error::{Error, Result};
use super::reduce::reduce_for_registration;
use crate::image::{resample_rigid_window, Plane, ZStack};
use crate::scalar::Real;
use crate::transform::{RigidTransform2D, BF_TO_FL_SCALE};

/// `(-180, 180]` in steps of `step_deg`.
pub fn default_angle_grid(step_deg: f64) -> Vec<f64> {
    let n = (360.0 / step_deg).round() as i64;
    (1..=n).map(|k| -180.0 + k as f64 * step_deg).collect()
}

/// Parameters of one single-resolution rigid registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    /// Fixed pixels per moving pixel.
    pub scale: f64,
    pub angle_grid_deg: Vec<f64>,
    /// Translation search radius in fixed pixels; `None` searches every
    /// offset that can overlap.
    pub radius: Option<usize>,
    pub levels: usize,
    pub min_overlap_frac: f64,
    pub fine_step_deg: f64,
}

impl Default for GlobalParams {
    fn default() -> Self {
        Self {
            scale: BF_TO_FL_SCALE,
            angle_grid_deg: default_angle_grid(1.0),
            radius: None,
            levels: 16,
            min_overlap_frac: 0.25,
            fine_step_deg: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalRegistration {
    pub transform: RigidTransform2D,
    pub mi_nats: f64,
}

/// Exhaustive rigid search: every angle of the grid with a full MI
/// translation surface, then a local pass around the winner at the fine
/// angular step.
pub fn register_rigid_global<T: Real>(
    fixed: &Plane<T>,
    moving: &Plane<T>,
    params: &GlobalParams,
) -> Result<GlobalRegistration> {
    if params.angle_grid_deg.is_empty() {
        return Err(Error::InvalidArgument("empty angle grid".into()));
    }
    let ctx = SearchContext::new(fixed, moving, params)?;
    let radius = params.radius.unwrap_or(fixed.height().max(fixed.width()));

    let coarse = ctx.best_over_angles(&params.angle_grid_deg, (0.0, 0.0), radius)?;
    let coarse_step = grid_step(&params.angle_grid_deg);
    let fine_angles = local_grid(coarse.transform.theta_deg(), coarse_step, params.fine_step_deg);
    let diag = ((fixed.height().pow(2) + fixed.width().pow(2)) as f64).sqrt();
    let fine_radius = ((coarse_step.to_radians() * diag).ceil() as usize + 2).min(radius);
    let fine = ctx.best_over_angles(&fine_angles, (coarse.transform.tx_px, coarse.transform.ty_px), fine_radius)?;
    let best = if fine.mi_nats >= coarse.mi_nats { fine } else { coarse };
    ctx.polish(best, params.fine_step_deg)
}

/// Coarse-to-fine wrapper: [`register_rigid_global`] on a block-averaged
/// pair whose longer fixed side is at most `coarse_max_side`, then local
/// angle/translation refinement at each finer level (factor 4 apart) down
/// to full resolution.
pub fn register_multiscale<T: Real>(
    fixed: &Plane<T>,
    moving: &Plane<T>,
    params: &GlobalParams,
    coarse_max_side: usize,
) -> Result<GlobalRegistration> {
    let side = fixed.height().max(fixed.width());
    let mut factor = 1usize;
    while side / factor > coarse_max_side.max(8) {
        factor *= 2;
    }
    if factor == 1 {
        return register_rigid_global(fixed, moving, params);
    }
    let reg = register_rigid_global(&fixed.downsample(factor), &moving.downsample(factor), params)?;
    let mut current = GlobalRegistration { transform: from_downsampled(&reg.transform, factor), mi_nats: reg.mi_nats };
    let mut prev_factor = factor;
    let mut span = grid_step(&params.angle_grid_deg).max(params.fine_step_deg);
    while prev_factor > 1 {
        let f = (prev_factor / 4).max(1);
        let (fx, mx) = (fixed.downsample(f), moving.downsample(f));
        let ctx = SearchContext::new(&fx, &mx, params)?;
        let guess = to_downsampled(&current.transform, f);
        let angles = local_grid(guess.theta_deg(), span, params.fine_step_deg);
        let radius = prev_factor / f + 2;
        let reg = ctx.best_over_angles(&angles, (guess.tx_px, guess.ty_px), radius)?;
        current = GlobalRegistration { transform: from_downsampled(&reg.transform, f), mi_nats: reg.mi_nats };
        prev_factor = f;
        span = (span / 4.0).max(3.0 * params.fine_step_deg);
    }
    SearchContext::new(fixed, moving, params)?.polish(current, params.fine_step_deg)
}

/// Registers the middle z-levels of a BF and an FL stack (BF fixed),
/// each reduced to one plane first.
pub fn register_stacks<T: Real>(
    bf: &ZStack<T>,
    fl: &ZStack<T>,
    params: &GlobalParams,
    coarse_max_side: usize,
) -> Result<GlobalRegistration> {
    let fixed = reduce_for_registration(&bf.levels()[bf.middle_index()]);
    let moving = reduce_for_registration(&fl.levels()[fl.middle_index()]);
    register_multiscale(&fixed, &moving, params, coarse_max_side)
}

/// Full-resolution transform from one estimated on `factor`-downsampled
/// planes (block centres sit at `factor * p + (factor - 1) / 2`).
fn from_downsampled(t: &RigidTransform2D, factor: usize) -> RigidTransform2D {
    if factor == 1 {
        return *t;
    }
    let f = factor as f64;
    let c = (f - 1.0) / 2.0;
    let (s, co) = t.theta_rad.sin_cos();
    let (rcx, rcy) = (co * c - s * c, s * c + co * c);
    RigidTransform2D {
        theta_rad: t.theta_rad,
        tx_px: f * t.tx_px - rcx + t.scale * c,
        ty_px: f * t.ty_px - rcy + t.scale * c,
        scale: t.scale,
    }
}

fn to_downsampled(t: &RigidTransform2D, factor: usize) -> RigidTransform2D {
    if factor == 1 {
        return *t;
    }
    let f = factor as f64;
    let c = (f - 1.0) / 2.0;
    let (s, co) = t.theta_rad.sin_cos();
    let (rcx, rcy) = (co * c - s * c, s * c + co * c);
    RigidTransform2D {
        theta_rad: t.theta_rad,
        tx_px: (rcx + t.tx_px - t.scale * c) / f,
        ty_px: (rcy + t.ty_px - t.scale * c) / f,
        scale: t.scale,
    }
}

/// Vertex of the parabola through `(-1, a), (0, b), (1, c)`, in units of
/// the sample spacing, clamped to half a step and snapped to 1/64 so that
/// symmetric profiles give exactly zero. Zero unless `b` is a strict peak.
fn parabolic_peak(a: f64, b: f64, c: f64) -> f64 {
    let curv = a - 2.0 * b + c;
    if !(a.is_finite() && c.is_finite() && curv < 0.0) {
        return 0.0;
    }
    ((0.5 * (a - c) / curv).clamp(-0.5, 0.5) * 64.0).round() / 64.0
}

/// `warp` moved by `(dx, dy)` pixels of its own rotated grid.
fn shifted(warp: &RigidTransform2D, dx: f64, dy: f64) -> Result<RigidTransform2D> {
    let (s, c) = warp.theta_rad.sin_cos();
    RigidTransform2D::new(warp.theta_rad, warp.tx_px + c * dx - s * dy, warp.ty_px + s * dx + c * dy, warp.scale)
}

fn grid_step(grid: &[f64]) -> f64 {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let step = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 1e-9)
        .fold(f64::INFINITY, f64::min);
    if step.is_finite() {
        step
    } else {
        1.0
    }
}

fn local_grid(center_deg: f64, span_deg: f64, step_deg: f64) -> Vec<f64> {
    let n = (span_deg / step_deg).round().max(0.0) as i64;
    (-n..=n).map(|k| center_deg + k as f64 * step_deg).collect()
}

struct SearchContext<'a, T> {
    fixed: LabelPlane,
    moving: &'a Plane<T>,
    height: usize,
    width: usize,
    scale: f64,
    levels: usize,
    min_overlap: usize,
}

impl<'a, T: Real> SearchContext<'a, T> {
    fn new(fixed: &Plane<T>, moving: &'a Plane<T>, params: &GlobalParams) -> Result<Self> {
        if !(params.scale > 0.0) {
            return Err(Error::InvalidTransform(format!("scale {}", params.scale)));
        }
        if fixed.is_empty() || moving.is_empty() {
            return Err(Error::EmptyPlane);
        }
        let q = quantize_equal_count(fixed, params.levels)?;
        if q.degenerate {
            return Err(Error::DegenerateInput("fixed projection is constant".into()));
        }
        let (lo, hi) = moving.min_max().expect("non-empty");
        if lo == hi {
            return Err(Error::DegenerateInput("moving projection is constant".into()));
        }
        let min_overlap = (params.min_overlap_frac * fixed.len() as f64).ceil() as usize;
        Ok(Self {
            fixed: q.labels,
            moving,
            height: fixed.height(),
            width: fixed.width(),
            scale: params.scale,
            levels: params.levels,
            min_overlap,
        })
    }

    /// MI over integer offsets within `radius` of `t0`, along the grid
    /// rotated by `theta`.
    fn surface(&self, theta_deg: f64, t0: (f64, f64), radius: usize) -> Result<Option<(RigidTransform2D, MiSurface)>> {
        let warp = RigidTransform2D::from_degrees(theta_deg, t0.0, t0.1, self.scale)?;
        let r = radius as f64;
        let canvas = resample_rigid_window(
            self.moving,
            &warp,
            (-r, -r),
            self.height + 2 * radius,
            self.width + 2 * radius,
        )?;
        if canvas.valid_count() < self.min_overlap.max(1) {
            return Ok(None);
        }
        let q = quantize_masked(&canvas.plane, Some(&canvas.mask), self.levels)?;
        let base = (radius as i64, radius as i64);
        let surface = mi_surface_with(&self.fixed, &q.labels, base, radius, self.min_overlap, CountMethod::Auto)?;
        Ok(Some((warp, surface)))
    }

    /// Best `(theta, t)` for one angle, translations searched within
    /// `radius` of `t0`.
    fn evaluate(&self, theta_deg: f64, t0: (f64, f64), radius: usize) -> Result<Option<GlobalRegistration>> {
        let Some((warp, surface)) = self.surface(theta_deg, t0, radius)? else {
            return Ok(None);
        };
        let Some(((dy, dx), mi)) = surface.best() else {
            return Ok(None);
        };
        let transform = shifted(&warp, dx as f64, dy as f64)?;
        Ok(Some(GlobalRegistration { transform, mi_nats: mi }))
    }

    /// Separable parabolic peak of the 3x3 MI neighbourhood at `best`.
    fn interpolate_translation(&self, best: GlobalRegistration) -> Result<GlobalRegistration> {
        let t = best.transform;
        let Some((warp, surface)) = self.surface(t.theta_deg(), (t.tx_px, t.ty_px), 1)? else {
            return Ok(best);
        };
        if surface.best_offset() != (0, 0) {
            return Ok(best);
        }
        let m0 = surface.mi_at(0, 0);
        let dx = parabolic_peak(surface.mi_at(0, -1), m0, surface.mi_at(0, 1));
        let dy = parabolic_peak(surface.mi_at(-1, 0), m0, surface.mi_at(1, 0));
        Ok(GlobalRegistration { transform: shifted(&warp, dx, dy)?, mi_nats: best.mi_nats })
    }

    /// Sub-pixel pass: translations on a half-pixel lattice around the
    /// best integer offset, at half the fine angular step. Integer shifts
    /// of the canvas move `t` along the rotated pixel grid, so the lattice
    /// is laid out in that grid too.
    fn polish(&self, best: GlobalRegistration, fine_step_deg: f64) -> Result<GlobalRegistration> {
        const SUB: i32 = 2;
        let theta = best.transform.theta_deg();
        let (s, c) = best.transform.theta_rad.sin_cos();
        let mut jobs = Vec::new();
        for a in local_grid(theta, fine_step_deg, fine_step_deg / 2.0) {
            for fy in 0..SUB {
                for fx in 0..SUB {
                    let (ux, uy) = (fx as f64 / SUB as f64, fy as f64 / SUB as f64);
                    jobs.push((a, (best.transform.tx_px + c * ux - s * uy, best.transform.ty_px + s * ux + c * uy)));
                }
            }
        }
        let results = jobs
            .par_iter()
            .map(|&(a, t0)| self.evaluate(a, t0, 1))
            .collect::<Result<Vec<_>>>()?;
        let per_angle = SUB as usize * SUB as usize;
        let mut out = best;
        let mut angle_mi = vec![f64::NEG_INFINITY; jobs.len() / per_angle];
        for (k, r) in results.into_iter().enumerate() {
            let Some(r) = r else { continue };
            angle_mi[k / per_angle] = angle_mi[k / per_angle].max(r.mi_nats);
            if r.mi_nats > out.mi_nats {
                out = r;
            }
        }
        let angles: Vec<f64> = jobs.iter().step_by(per_angle).map(|j| j.0).collect();
        self.interpolate_translation(self.interpolate_angle(out, &angle_mi, &angles))
    }

    /// Parabolic peak of the per-angle MI profile around the winner.
    /// The fixed-image centre stays put, so `t` moves with the angle.
    fn interpolate_angle(&self, best: GlobalRegistration, mi: &[f64], angles: &[f64]) -> GlobalRegistration {
        let theta = best.transform.theta_deg();
        let Some(k) = angles.iter().position(|a| (a - theta).abs() < 1e-9) else {
            return best;
        };
        if k == 0 || k + 1 >= angles.len() {
            return best;
        }
        let step = angles[k + 1] - angles[k];
        let delta = parabolic_peak(mi[k - 1], mi[k], mi[k + 1]) * step;
        if delta == 0.0 {
            return best;
        }
        let t = best.transform;
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        let (s0, c0) = t.theta_rad.sin_cos();
        let new_theta = t.theta_rad + delta.to_radians();
        let (s1, c1) = new_theta.sin_cos();
        let tx = t.tx_px + (c0 * cx - s0 * cy) - (c1 * cx - s1 * cy);
        let ty = t.ty_px + (s0 * cx + c0 * cy) - (s1 * cx + c1 * cy);
        match RigidTransform2D::new(new_theta, tx, ty, t.scale) {
            Ok(transform) => GlobalRegistration { transform, mi_nats: best.mi_nats },
            Err(_) => best,
        }
    }

    fn best_over_angles(&self, angles: &[f64], t0: (f64, f64), radius: usize) -> Result<GlobalRegistration> {
        let results = angles
            .par_iter()
            .map(|&a| self.evaluate(a, t0, radius))
            .collect::<Result<Vec<_>>>()?;
        // First maximum in grid order; independent of scheduling.
        let mut best: Option<GlobalRegistration> = None;
        for r in results.into_iter().flatten() {
            if best.map_or(true, |b| r.mi_nats > b.mi_nats) {
                best = Some(r);
            }
        }
        best.ok_or(Error::NoValidOverlap(self.min_overlap))
    }
}
