//! Synthetic BF/FL slide pairs with known geometry.
//!
//! BF: bright background with dark textured elliptical nuclei inside faint
//! cytoplasm. FL: four channels of rings and disks around the same nuclei,
//! drawn in the BF frame, displaced per nucleus by a small residual, and
//! sampled through the BF-to-FL transform, plus an additive smooth bias
//! field. Each nucleus has its own sharp z-level in each modality; other
//! levels are rendered with the analytic Gaussian defocus of the shapes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};
use crate::image::{Modality, MultiChannelImage, Plane, ZStack};
use crate::io::{write_json, SlideDescriptor};
use crate::transform::{RigidTransform2D, BF_TO_FL_SCALE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub slide_id: String,
    pub n_nuclei: usize,
    /// BF slide side.
    pub slide_px: usize,
    /// FL slide side; defaults to the BF side divided by the scale.
    pub fl_slide_px: Option<usize>,
    /// BF frame to FL frame.
    pub transform: RigidTransform2D,
    /// Per-nucleus FL residual, uniform in `[-jitter, jitter]` per axis (BF px).
    pub jitter_px: f64,
    pub class_effect: f64,
    pub label: Label,
    pub bf_levels: usize,
    pub fl_levels: usize,
    /// Defocus sigma added per level away from the sharp one (BF px).
    pub blur_step_px: f64,
    pub nucleus_radius_px: (f64, f64),
    /// Nuclei keep this distance from the BF slide edge.
    pub bf_margin_px: f64,
    /// Mapped nuclei keep this distance from the FL slide edge.
    pub fl_margin_px: f64,
    pub min_separation_px: f64,
    /// Peak of the additive FL bias field.
    pub bias_strength: f64,
    pub noise: f64,
    pub pixel_size_um: f64,
    pub bf_z_step_um: f64,
    pub fl_z_step_um: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let slide_px = 1024;
        Self {
            slide_id: "phantom".into(),
            n_nuclei: 120,
            slide_px,
            fl_slide_px: None,
            transform: PhantomSpec::centered_transform(slide_px, default_fl_side(slide_px, BF_TO_FL_SCALE), 5.0, (0.0, 0.0)),
            jitter_px: 2.0,
            class_effect: 0.0,
            label: Label::Negative,
            bf_levels: 11,
            fl_levels: 5,
            blur_step_px: 1.0,
            nucleus_radius_px: (9.0, 14.0),
            bf_margin_px: 160.0,
            fl_margin_px: 0.0,
            min_separation_px: 48.0,
            bias_strength: 0.5,
            noise: 0.01,
            pixel_size_um: 0.25,
            bf_z_step_um: 0.4,
            fl_z_step_um: 0.8,
        }
    }
}

fn default_fl_side(slide_px: usize, scale: f64) -> usize {
    (slide_px as f64 / scale).ceil() as usize
}

impl PhantomSpec {
    /// Transform at `theta_deg` mapping the BF slide centre onto the FL
    /// slide centre, then offset by `shift` (BF px, added to `t`).
    pub fn centered_transform(bf_side: usize, fl_side: usize, theta_deg: f64, shift: (f64, f64)) -> RigidTransform2D {
        let cb = (bf_side as f64 - 1.0) / 2.0;
        let cf = (fl_side as f64 - 1.0) / 2.0;
        let (s, c) = theta_deg.to_radians().sin_cos();
        let scale = BF_TO_FL_SCALE;
        RigidTransform2D::from_degrees(
            theta_deg,
            scale * cf - (c * cb - s * cb) + shift.0,
            scale * cf - (s * cb + c * cb) + shift.1,
            scale,
        )
        .expect("finite transform")
    }

    pub fn fl_side(&self) -> usize {
        self.fl_slide_px.unwrap_or_else(|| default_fl_side(self.slide_px, self.transform.scale))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomNucleus {
    /// BF slide position.
    pub x_px: f64,
    pub y_px: f64,
    /// FL slide position of the displaced FL content.
    pub fl_x_px: f64,
    pub fl_y_px: f64,
    /// Offset `(dy, dx)` of the FL content from where the transform puts
    /// the BF nucleus, in BF px.
    pub residual_dy: f64,
    pub residual_dx: f64,
    pub radius_px: f64,
    pub sharp_bf: usize,
    pub sharp_fl: usize,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub seed: u64,
    pub spec: PhantomSpec,
    pub transform: RigidTransform2D,
    pub nuclei: Vec<PhantomNucleus>,
}

pub struct Phantom {
    pub bf: ZStack<f32>,
    pub fl: ZStack<f32>,
    pub truth: PhantomTruth,
}

impl Phantom {
    /// `bf.json`, `fl.json` (with their TIFFs) and `truth.json` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        SlideDescriptor::save(&dir.join("bf.json"), &self.bf)?;
        SlideDescriptor::save(&dir.join("fl.json"), &self.fl)?;
        write_json(&dir.join("truth.json"), &self.truth)
    }
}

/// Everything drawn for one nucleus.
struct Shape {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos_phi: f64,
    sin_phi: f64,
    /// (frequency, direction cos, direction sin, phase, amplitude)
    texture: [(f64, f64, f64, f64, f64); 3],
    absorb: f64,
    jitter: (f64, f64),
    sharp_bf: usize,
    sharp_fl: usize,
    fl_gain: [f64; 4],
    ring_factor: f64,
}

const BF_BACKGROUND: [f64; 3] = [0.92, 0.90, 0.94];
const BF_ABSORB: [f64; 3] = [0.85, 1.0, 0.7];
const FL_RING: [f64; 4] = [1.35, 0.0, 0.7, 1.7];
const FL_BASE: f64 = 0.05;
const EDGE_SIGMA: f64 = 0.6;
const RING_WIDTH: f64 = 1.5;
const CYTO_FACTOR: f64 = 2.6;

/// Normal CDF, logistic approximation.
#[inline]
fn phi(z: f64) -> f64 {
    1.0 / (1.0 + (-1.702 * z).exp())
}

impl Shape {
    fn radius(&self) -> f64 {
        (self.a * self.b).sqrt()
    }

    /// Local elliptic coordinates relative to a centre.
    fn local(&self, dx: f64, dy: f64) -> (f64, f64) {
        (self.cos_phi * dx + self.sin_phi * dy, -self.sin_phi * dx + self.cos_phi * dy)
    }

    fn soft_mask(&self, u: f64, v: f64, a: f64, b: f64, sigma: f64) -> f64 {
        let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
        let dist = (rho - 1.0) * (a * b).sqrt();
        phi(-dist / sigma)
    }

    /// BF absorbance (before the channel factor) at offset `(dx, dy)` from
    /// the nucleus centre, defocused by `defocus`.
    fn bf_absorbance(&self, dx: f64, dy: f64, defocus: f64) -> f64 {
        let (u, v) = self.local(dx, dy);
        let se = (EDGE_SIGMA * EDGE_SIGMA + defocus * defocus).sqrt();
        let nucleus = self.soft_mask(u, v, self.a, self.b, se);
        let cyto = self.soft_mask(u, v, CYTO_FACTOR * self.a, CYTO_FACTOR * self.b * 0.9, (4.0f64.powi(2) + defocus * defocus).sqrt());
        let mut tex = 0.0;
        for &(f, dc, ds, ph, amp) in &self.texture {
            let damp = (-2.0 * std::f64::consts::PI.powi(2) * f * f * defocus * defocus).exp();
            tex += amp * damp * (2.0 * std::f64::consts::PI * f * (dc * u + ds * v) + ph).cos();
        }
        self.absorb * nucleus * (1.0 + tex) + 0.1 * cyto * (1.0 - nucleus)
    }

    /// FL intensity of channel `ch` at BF-frame offset `(dx, dy)` from the
    /// displaced FL centre.
    fn fl_intensity(&self, ch: usize, dx: f64, dy: f64, defocus: f64) -> f64 {
        let r = (dx * dx + dy * dy).sqrt();
        let rn = self.radius();
        let gain = self.fl_gain[ch];
        match ch {
            1 => {
                let se = (EDGE_SIGMA * EDGE_SIGMA + defocus * defocus).sqrt();
                0.5 * gain * phi(-(r - rn) / se)
            }
            0 => {
                let sr = (RING_WIDTH * RING_WIDTH + defocus * defocus).sqrt();
                let ring = gain * (RING_WIDTH / sr) * (-(r - FL_RING[0] * self.ring_factor * rn).powi(2) / (2.0 * sr * sr)).exp();
                let cyto = 0.2 * phi(-(r - CYTO_FACTOR * rn) / (4.0f64.powi(2) + defocus * defocus).sqrt());
                ring + cyto
            }
            _ => {
                let sr = (RING_WIDTH * RING_WIDTH + defocus * defocus).sqrt();
                gain * (RING_WIDTH / sr) * (-(r - FL_RING[ch] * self.ring_factor * rn).powi(2) / (2.0 * sr * sr)).exp()
            }
        }
    }

    fn extent(&self, defocus: f64) -> f64 {
        CYTO_FACTOR * self.a.max(self.b) * FL_RING[3].max(1.0) + 4.0 * (16.0 + defocus * defocus).sqrt() + 3.0
    }
}

fn sample_shape(seed: u64, index: usize, spec: &PhantomSpec, cx: f64, cy: f64) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let positive = spec.label == Label::Positive;
    let effect = if positive { spec.class_effect } else { 0.0 };
    let (rlo, rhi) = spec.nucleus_radius_px;
    let r = if rhi > rlo { rng.gen_range(rlo..rhi) } else { rlo } * (1.0 + 0.4 * effect);
    let elong = rng.gen_range(0.85..1.15) * (1.0 + 0.25 * effect);
    let phi_angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let mut texture = [(0.0, 1.0, 0.0, 0.0, 0.0); 3];
    for t in &mut texture {
        let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        *t = (rng.gen_range(0.08..0.2), dir.cos(), dir.sin(), rng.gen_range(0.0..std::f64::consts::TAU), 0.15);
    }
    let j = spec.jitter_px;
    let jitter = if j > 0.0 { (rng.gen_range(-j..=j), rng.gen_range(-j..=j)) } else { (0.0, 0.0) };
    let mut fl_gain = [0.0; 4];
    for g in &mut fl_gain {
        *g = rng.gen_range(0.6..1.0);
    }
    fl_gain[3] *= 1.0 + effect;
    Shape {
        cx,
        cy,
        a: r * elong.sqrt(),
        b: r / elong.sqrt(),
        cos_phi: phi_angle.cos(),
        sin_phi: phi_angle.sin(),
        texture,
        absorb: (0.5 * (1.0 + 0.3 * effect)).min(0.9),
        jitter,
        sharp_bf: rng.gen_range(0..spec.bf_levels.max(1)),
        sharp_fl: rng.gen_range(0..spec.fl_levels.max(1)),
        fl_gain,
        ring_factor: 1.0 + 0.2 * effect,
    }
}

fn noise_plane(seed: u64, stream: u64, side: usize, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..side * side).map(|_| amplitude * (rng.gen::<f64>() - 0.5)).collect()
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if spec.slide_px < 1024 {
        return bad(format!("phantom slide side {} < 1024", spec.slide_px));
    }
    if spec.bf_levels == 0 || spec.fl_levels == 0 {
        return bad("phantom needs at least one z-level per modality".into());
    }
    if !(spec.nucleus_radius_px.0 > 0.0 && spec.nucleus_radius_px.1 >= spec.nucleus_radius_px.0) {
        return bad(format!("nucleus radius range {:?}", spec.nucleus_radius_px));
    }
    if !(spec.jitter_px >= 0.0 && spec.blur_step_px >= 0.0 && spec.noise >= 0.0 && spec.class_effect >= 0.0) {
        return bad("phantom jitter, blur, noise and class effect must be non-negative".into());
    }
    spec.transform.validate()
}

/// Deterministic in `seed`; parallel rendering does not change the output.
pub fn synth_phantom(seed: u64, spec: &PhantomSpec) -> Result<Phantom> {
    validate(spec)?;
    let side = spec.slide_px;
    let fl_side = spec.fl_side();
    let t = spec.transform;

    // Placement: sequential rejection sampling on the main stream.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes: Vec<Shape> = Vec::with_capacity(spec.n_nuclei);
    let (lo, hi) = (spec.bf_margin_px, side as f64 - 1.0 - spec.bf_margin_px);
    let fl_lo = spec.fl_margin_px;
    let fl_hi = fl_side as f64 - 1.0 - spec.fl_margin_px;
    if !(hi > lo) {
        return Err(Error::InvalidArgument("BF margin leaves no room for nuclei".into()));
    }
    let max_attempts = 10_000 * spec.n_nuclei.max(1);
    let mut attempts = 0;
    while shapes.len() < spec.n_nuclei {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArgument(format!(
                "could only place {} of {} nuclei with the requested margins and separation",
                shapes.len(),
                spec.n_nuclei
            )));
        }
        let (cx, cy) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        let sep2 = spec.min_separation_px * spec.min_separation_px;
        if shapes.iter().any(|s| (s.cx - cx).powi(2) + (s.cy - cy).powi(2) < sep2) {
            continue;
        }
        let shape = sample_shape(seed, shapes.len(), spec, cx, cy);
        let (fx, fy) = t.apply(cx + shape.jitter.0, cy + shape.jitter.1);
        let margin = spec.jitter_px / t.scale;
        if fx - margin < fl_lo || fy - margin < fl_lo || fx + margin > fl_hi || fy + margin > fl_hi {
            continue;
        }
        shapes.push(shape);
    }

    let bf = render_bf(seed, spec, &shapes)?;
    let fl = render_fl(seed, spec, &shapes)?;

    let nuclei = shapes
        .iter()
        .map(|s| {
            let (fx, fy) = t.apply(s.cx + s.jitter.0, s.cy + s.jitter.1);
            PhantomNucleus {
                x_px: s.cx,
                y_px: s.cy,
                fl_x_px: fx,
                fl_y_px: fy,
                residual_dy: s.jitter.1,
                residual_dx: s.jitter.0,
                radius_px: s.radius(),
                sharp_bf: s.sharp_bf,
                sharp_fl: s.sharp_fl,
                label: spec.label,
            }
        })
        .collect();
    Ok(Phantom { bf, fl, truth: PhantomTruth { seed, spec: spec.clone(), transform: t, nuclei } })
}

fn render_bf(seed: u64, spec: &PhantomSpec, shapes: &[Shape]) -> Result<ZStack<f32>> {
    let side = spec.slide_px;
    let c = (side as f64 - 1.0) / 2.0;
    let noise: Vec<Vec<f64>> = (0..3).map(|ch| noise_plane(seed, 1_000_000 + ch as u64, side, spec.noise)).collect();
    let levels = (0..spec.bf_levels)
        .into_par_iter()
        .map(|k| {
            // Absorbance accumulates over nuclei in index order.
            let mut absorb = vec![0.0f64; side * side];
            for s in shapes {
                let defocus = k.abs_diff(s.sharp_bf) as f64 * spec.blur_step_px;
                let ext = s.extent(defocus);
                let (x0, x1) = (((s.cx - ext).floor().max(0.0)) as usize, ((s.cx + ext).ceil() as usize).min(side - 1));
                let (y0, y1) = (((s.cy - ext).floor().max(0.0)) as usize, ((s.cy + ext).ceil() as usize).min(side - 1));
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        absorb[y * side + x] += s.bf_absorbance(x as f64 - s.cx, y as f64 - s.cy, defocus);
                    }
                }
            }
            let channels = (0..3)
                .map(|ch| {
                    let data = (0..side * side)
                        .map(|i| {
                            let (y, x) = ((i / side) as f64, (i % side) as f64);
                            let rho2 = ((x - c).powi(2) + (y - c).powi(2)) / (c * c);
                            let bg = BF_BACKGROUND[ch] * (1.0 - 0.08 * rho2);
                            let v = bg * (1.0 - BF_ABSORB[ch] * absorb[i]).max(0.02) + noise[ch][i];
                            v as f32
                        })
                        .collect();
                    Plane::new(side, side, data, spec.pixel_size_um)
                })
                .collect::<Result<Vec<_>>>()?;
            MultiChannelImage::new(Modality::Bf, channels)
        })
        .collect::<Result<Vec<_>>>()?;
    ZStack::new(levels, ZStack::<f32>::centered_offsets(spec.bf_levels, spec.bf_z_step_um))
}

fn render_fl(seed: u64, spec: &PhantomSpec, shapes: &[Shape]) -> Result<ZStack<f32>> {
    let side = spec.fl_side();
    let t = spec.transform;
    let inv = t.inverse();
    let scale = t.scale;
    let (bx, by, bs) = (0.3 * side as f64, 0.6 * side as f64, 0.5 * side as f64);
    let bias: Vec<f64> = (0..side * side)
        .map(|i| {
            let (y, x) = ((i / side) as f64, (i % side) as f64);
            spec.bias_strength * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * bs * bs)).exp()
        })
        .collect();
    let noise: Vec<Vec<f64>> = (0..4).map(|ch| noise_plane(seed, 2_000_000 + ch as u64, side, spec.noise)).collect();
    let jobs: Vec<(usize, usize)> = (0..spec.fl_levels).flat_map(|k| (0..4).map(move |ch| (k, ch))).collect();
    let planes = jobs
        .par_iter()
        .map(|&(k, ch)| {
            let mut data: Vec<f64> = (0..side * side).map(|i| FL_BASE + bias[i] + noise[ch][i]).collect();
            for s in shapes {
                let defocus = k.abs_diff(s.sharp_fl) as f64 * spec.blur_step_px;
                let (ccx, ccy) = (s.cx + s.jitter.0, s.cy + s.jitter.1);
                let (fx, fy) = t.apply(ccx, ccy);
                let ext = s.extent(defocus) / scale + 2.0;
                let x0 = (fx - ext).floor().max(0.0) as usize;
                let y0 = (fy - ext).floor().max(0.0) as usize;
                let x1 = ((fx + ext).ceil().max(0.0) as usize).min(side - 1);
                let y1 = ((fy + ext).ceil().max(0.0) as usize).min(side - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let (px, py) = inv.apply(x as f64, y as f64);
                        data[y * side + x] += s.fl_intensity(ch, px - ccx, py - ccy, defocus);
                    }
                }
            }
            Plane::new(side, side, data.into_iter().map(|v| v as f32).collect(), spec.pixel_size_um * scale)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = planes.into_iter();
    let levels = (0..spec.fl_levels)
        .map(|_| MultiChannelImage::new(Modality::Fl, it.by_ref().take(4).collect()))
        .collect::<Result<Vec<_>>>()?;
    ZStack::new(levels, ZStack::<f32>::centered_offsets(spec.fl_levels, spec.fl_z_step_um))
}
