//! Nucleus coordinates from detector heatmaps: strict local maxima above a
//! threshold, greedy non-maximum suppression, and the union of detections
//! over several z-levels.

use std::cmp::Ordering;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_filter, Plane};
use crate::scalar::Real;

/// Heatmaps are computed on 4x4-downsampled slides.
pub const HEATMAP_DOWNSAMPLE: usize = 4;
pub const DEFAULT_PEAK_THRESHOLD: f64 = 0.5;
/// Full-resolution merge radius across z-levels.
pub const DEFAULT_MERGE_RADIUS: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NucleusRecord {
    pub slide_id: String,
    pub x_px: f64,
    pub y_px: f64,
    pub score: f64,
    pub source_z: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    pub threshold: f64,
    pub min_distance: f64,
    /// Heatmap-to-slide coordinate factor.
    pub downsample: usize,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self { threshold: DEFAULT_PEAK_THRESHOLD, min_distance: 4.0, downsample: HEATMAP_DOWNSAMPLE }
    }
}

fn by_score_then_position(a: &NucleusRecord, b: &NucleusRecord) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.y_px.total_cmp(&b.y_px))
        .then(a.x_px.total_cmp(&b.x_px))
        .then(a.source_z.cmp(&b.source_z))
}

/// Strict 8-neighbourhood maxima with value above `threshold`, suppressed
/// greedily by descending score within `min_distance` heatmap pixels, and
/// reported in full-resolution slide coordinates.
pub fn detect_peaks<T: Real>(
    heatmap: &Plane<T>,
    slide_id: &str,
    source_z: usize,
    params: &PeakParams,
) -> Result<Vec<NucleusRecord>> {
    if !(params.threshold > 0.0 && params.threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {} outside (0, 1]", params.threshold)));
    }
    if !(params.min_distance >= 1.0) {
        return Err(Error::InvalidArgument(format!("min_distance {} < 1", params.min_distance)));
    }
    let (h, w) = (heatmap.height() as i64, heatmap.width() as i64);
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = heatmap[(y as usize, x as usize)].to_f64_lossy();
            if v <= params.threshold {
                continue;
            }
            let is_max = (-1..=1).all(|dy| {
                (-1..=1).all(|dx| (dy == 0 && dx == 0) || heatmap.get(y + dy, x + dx).map_or(true, |n| n.to_f64_lossy() < v))
            });
            if is_max {
                candidates.push(NucleusRecord {
                    slide_id: slide_id.to_string(),
                    x_px: x as f64,
                    y_px: y as f64,
                    score: v,
                    source_z,
                });
            }
        }
    }
    let mut kept = suppress(candidates, params.min_distance);
    let f = params.downsample as f64;
    for r in &mut kept {
        r.x_px *= f;
        r.y_px *= f;
    }
    Ok(kept)
}

/// Greedy suppression: highest score first, drop anything within `radius`
/// of an already kept record.
fn suppress(mut records: Vec<NucleusRecord>, radius: f64) -> Vec<NucleusRecord> {
    records.sort_by(by_score_then_position);
    let r2 = radius * radius;
    let mut kept: Vec<NucleusRecord> = Vec::new();
    for rec in records {
        let close = kept.iter().any(|k| {
            let (dx, dy) = (k.x_px - rec.x_px, k.y_px - rec.y_px);
            dx * dx + dy * dy <= r2
        });
        if !close {
            kept.push(rec);
        }
    }
    kept
}

/// Union of per-level detections; records within `radius` full-resolution
/// pixels of a kept record (from any level) collapse into it.
pub fn merge_across_z(per_level: &[Vec<NucleusRecord>], radius: f64) -> Result<Vec<NucleusRecord>> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("merge radius {radius}")));
    }
    Ok(suppress(per_level.iter().flatten().cloned().collect(), radius))
}

/// Difference-of-Gaussians blob response `(sigma, 1.6 sigma)`, negative
/// lobes clipped, scaled so the strongest response is 1. Values below
/// `floor` (relative to that maximum) are zeroed.
pub fn baseline_blob_detector<T: Real>(plane: &Plane<T>, sigma: f64, floor: f64) -> Result<Plane<T>> {
    let narrow = gaussian_filter(&plane.cast::<f64>(), sigma)?;
    let wide = gaussian_filter(&plane.cast::<f64>(), 1.6 * sigma)?;
    let dog: Vec<f64> = narrow.as_slice().iter().zip(wide.as_slice()).map(|(a, b)| (a - b).max(0.0)).collect();
    let max = dog.iter().copied().fold(0.0, f64::max);
    // Numerical dust on a blank plane is not a response.
    let magnitude = plane.as_slice().iter().fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
    let out: Vec<T> = if max <= 1e-9 * magnitude.max(1e-30) || max == 0.0 {
        vec![T::zero(); dog.len()]
    } else {
        dog.iter()
            .map(|&v| {
                let n = v / max;
                T::of(if n < floor { 0.0 } else { n })
            })
            .collect()
    };
    Plane::new(plane.height(), plane.width(), out, plane.pixel_size_um())
}

pub const NUCLEUS_CSV_HEADER: &str = "slide_id,x_px,y_px,score,source_z";

pub fn write_nucleus_csv(path: &Path, records: &[NucleusRecord]) -> Result<()> {
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(NUCLEUS_CSV_HEADER);
    out.push('\n');
    for r in records {
        if r.slide_id.contains([',', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!("slide id '{}' contains a separator", r.slide_id)));
        }
        out.push_str(&format!("{},{},{},{},{}\n", r.slide_id, r.x_px, r.y_px, r.score, r.source_z));
    }
    crate::io::write_atomic(path, out.as_bytes())
}

pub fn read_nucleus_csv(path: &Path) -> Result<Vec<NucleusRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines.next().transpose().map_err(|e| Error::io(path, e))?;
    if header.as_deref().map(str::trim_end) != Some(NUCLEUS_CSV_HEADER) {
        return Err(Error::format(path, "missing nucleus CSV header"));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::format(path, format!("line {}: malformed record", n + 2));
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(NucleusRecord {
            slide_id: f[0].to_string(),
            x_px: f[1].parse().map_err(|_| bad())?,
            y_px: f[2].parse().map_err(|_| bad())?,
            score: f[3].parse().map_err(|_| bad())?,
            source_z: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
