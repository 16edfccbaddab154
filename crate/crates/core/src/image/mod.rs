//! Image containers and the numeric primitives shared by every stage:
//! separable Gaussian filtering, rigid bilinear resampling and percentiles.

mod filter;
mod resample;
mod stats;

pub use filter::{gaussian_filter, gaussian_kernel};
pub use resample::{resample_rigid, resample_rigid_window, Resampled};
pub use stats::{percentile, percentile_of_sorted};

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major single-channel image with physical pixel spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
    pixel_size_um: f64,
}

impl<T: Real> Plane<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>, pixel_size_um: f64) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {height}x{width} plane",
                data.len()
            )));
        }
        if !(pixel_size_um > 0.0 && pixel_size_um.is_finite()) {
            return Err(Error::InvalidImage(format!("pixel size {pixel_size_um} um")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        Ok(Self { height, width, data, pixel_size_um })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width], pixel_size_um: 1.0 }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    /// Builds a plane by evaluating `f(y, x)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data, pixel_size_um: 1.0 }
    }

    pub fn with_pixel_size(mut self, pixel_size_um: f64) -> Self {
        assert!(pixel_size_um > 0.0, "pixel size must be positive");
        self.pixel_size_um = pixel_size_um;
        self
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn pixel_size_um(&self) -> f64 {
        self.pixel_size_um
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Pixel at signed coordinates, `None` outside the plane.
    #[inline]
    pub fn get(&self, y: i64, x: i64) -> Option<T> {
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            None
        } else {
            Some(self.data[y as usize * self.width + x as usize])
        }
    }

    pub fn same_shape<U>(&self, other: &Plane<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map<U: Real>(&self, mut f: impl FnMut(T) -> U) -> Plane<U> {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
            pixel_size_um: self.pixel_size_um,
        }
    }

    pub fn cast<U: Real>(&self) -> Plane<U> {
        self.map(|v| U::of(v.to_f64_lossy()))
    }

    /// Copies the window with top-left corner `(y0, x0)`; `None` when the
    /// window is not fully inside the plane.
    pub fn crop(&self, y0: i64, x0: i64, height: usize, width: usize) -> Option<Plane<T>> {
        if y0 < 0
            || x0 < 0
            || y0 as usize + height > self.height
            || x0 as usize + width > self.width
        {
            return None;
        }
        let (y0, x0) = (y0 as usize, x0 as usize);
        let mut data = Vec::with_capacity(height * width);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.row(y)[x0..x0 + width]);
        }
        Some(Plane { height, width, data, pixel_size_um: self.pixel_size_um })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossy()).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn min_max(&self) -> Option<(T, T)> {
        let first = *self.data.first()?;
        Some(self.data.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }

    /// Block-average downsampling by an integer factor; trailing pixels that
    /// do not fill a whole block are dropped.
    pub fn downsample(&self, factor: usize) -> Plane<T> {
        assert!(factor >= 1, "downsample factor must be >= 1");
        if factor == 1 {
            return self.clone();
        }
        let h = self.height / factor;
        let w = self.width / factor;
        let norm = 1.0 / (factor * factor) as f64;
        let out = Plane::from_fn(h, w, |y, x| {
            let mut acc = 0.0;
            for yy in y * factor..(y + 1) * factor {
                for v in &self.row(yy)[x * factor..(x + 1) * factor] {
                    acc += v.to_f64_lossy();
                }
            }
            T::of(acc * norm)
        });
        out.with_pixel_size(self.pixel_size_um * factor as f64)
    }
}

impl<T> Index<(usize, usize)> for Plane<T> {
    type Output = T;

    #[inline]
    fn index(&self, (y, x): (usize, usize)) -> &T {
        debug_assert!(y < self.height && x < self.width);
        &self.data[y * self.width + x]
    }
}

impl<T> IndexMut<(usize, usize)> for Plane<T> {
    #[inline]
    fn index_mut(&mut self, (y, x): (usize, usize)) -> &mut T {
        debug_assert!(y < self.height && x < self.width);
        &mut self.data[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Bf,
    Fl,
}

impl Modality {
    /// 3 RGB channels for brightfield, 4 emission channels for fluorescence.
    pub fn channel_count(self) -> usize {
        match self {
            Modality::Bf => 3,
            Modality::Fl => 4,
        }
    }

    pub fn default_channel_names(self) -> Vec<String> {
        match self {
            Modality::Bf => ["R", "G", "B"].map(String::from).to_vec(),
            Modality::Fl => ["465", "517", "568", "668"].map(String::from).to_vec(),
        }
    }
}

/// Same-geometry channels of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelImage<T> {
    channels: Vec<Plane<T>>,
    modality: Modality,
    channel_names: Vec<String>,
}

impl<T: Real> MultiChannelImage<T> {
    pub fn new(modality: Modality, channels: Vec<Plane<T>>) -> Result<Self> {
        Self::with_names(modality, channels, modality.default_channel_names())
    }

    pub fn with_names(
        modality: Modality,
        channels: Vec<Plane<T>>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if channels.len() != modality.channel_count() {
            return Err(Error::InvalidImage(format!(
                "{modality:?} needs {} channels, got {}",
                modality.channel_count(),
                channels.len()
            )));
        }
        if channel_names.len() != channels.len() {
            return Err(Error::InvalidImage("channel name count mismatch".into()));
        }
        let first = &channels[0];
        if channels.iter().any(|c| {
            !c.same_shape(first) || (c.pixel_size_um() - first.pixel_size_um()).abs() > 1e-12
        }) {
            return Err(Error::InvalidImage("channels differ in geometry".into()));
        }
        Ok(Self { channels, modality, channel_names })
    }

    #[inline]
    pub fn modality(&self) -> Modality {
        self.modality
    }

    #[inline]
    pub fn channels(&self) -> &[Plane<T>] {
        &self.channels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn into_channels(self) -> Vec<Plane<T>> {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn pixel_size_um(&self) -> f64 {
        self.channels[0].pixel_size_um()
    }

    /// Applies `f` to every channel, keeping modality and names.
    pub fn map_channels(&self, f: impl FnMut(&Plane<T>) -> Plane<T>) -> Result<Self> {
        Self::with_names(
            self.modality,
            self.channels.iter().map(f).collect(),
            self.channel_names.clone(),
        )
    }

    pub fn crop(&self, y0: i64, x0: i64, height: usize, width: usize) -> Option<Self> {
        let channels = self
            .channels
            .iter()
            .map(|c| c.crop(y0, x0, height, width))
            .collect::<Option<Vec<_>>>()?;
        Some(Self { channels, modality: self.modality, channel_names: self.channel_names.clone() })
    }
}

/// Focus stack: one multi-channel image per z-offset.
#[derive(Clone, Debug, PartialEq)]
pub struct ZStack<T> {
    levels: Vec<MultiChannelImage<T>>,
    z_offsets_um: Vec<f64>,
}

impl<T: Real> ZStack<T> {
    pub fn new(levels: Vec<MultiChannelImage<T>>, z_offsets_um: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidImage("z-stack has no levels".into()));
        }
        if levels.len() != z_offsets_um.len() {
            return Err(Error::InvalidImage(format!(
                "{} levels but {} z-offsets",
                levels.len(),
                z_offsets_um.len()
            )));
        }
        if z_offsets_um.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidImage("z-offsets must be strictly increasing".into()));
        }
        let first = &levels[0];
        if levels.iter().any(|l| {
            l.modality() != first.modality()
                || l.height() != first.height()
                || l.width() != first.width()
        }) {
            return Err(Error::InvalidImage("z-levels differ in modality or geometry".into()));
        }
        Ok(Self { levels, z_offsets_um })
    }

    /// Offsets centred on zero with a fixed step, e.g. 11 levels at 0.4 um.
    pub fn centered_offsets(count: usize, step_um: f64) -> Vec<f64> {
        let mid = (count as f64 - 1.0) / 2.0;
        (0..count).map(|i| (i as f64 - mid) * step_um).collect()
    }

    #[inline]
    pub fn levels(&self) -> &[MultiChannelImage<T>] {
        &self.levels
    }

    #[inline]
    pub fn z_offsets_um(&self) -> &[f64] {
        &self.z_offsets_um
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn middle_index(&self) -> usize {
        (self.levels.len() - 1) / 2
    }

    pub fn modality(&self) -> Modality {
        self.levels[0].modality()
    }

    pub fn height(&self) -> usize {
        self.levels[0].height()
    }

    pub fn width(&self) -> usize {
        self.levels[0].width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_rejects_bad_geometry() {
        assert!(Plane::new(2, 2, vec![0.0f32; 3], 1.0).is_err());
        assert!(Plane::new(2, 2, vec![0.0f32; 4], 0.0).is_err());
        assert!(Plane::new(1, 1, vec![f32::NAN], 1.0).is_err());
    }

    #[test]
    fn modality_channel_counts() {
        let p = Plane::<f32>::zeros(4, 4);
        assert!(MultiChannelImage::new(Modality::Bf, vec![p.clone(); 3]).is_ok());
        assert!(MultiChannelImage::new(Modality::Bf, vec![p.clone(); 4]).is_err());
        assert!(MultiChannelImage::new(Modality::Fl, vec![p.clone(); 4]).is_ok());
    }

    #[test]
    fn zstack_requires_increasing_offsets() {
        let img = MultiChannelImage::new(Modality::Fl, vec![Plane::<f32>::zeros(2, 2); 4]).unwrap();
        assert!(ZStack::new(vec![img.clone(), img.clone()], vec![0.0, 0.0]).is_err());
        let z = ZStack::new(vec![img.clone(); 5], ZStack::<f32>::centered_offsets(5, 1.0)).unwrap();
        assert_eq!(z.z_offsets_um(), &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(z.middle_index(), 2);
    }

    #[test]
    fn crop_is_bit_exact() {
        let p = Plane::<f32>::from_fn(10, 12, |y, x| (y * 100 + x) as f32);
        let c = p.crop(2, 3, 4, 5).unwrap();
        assert_eq!(c[(0, 0)], 203.0);
        assert_eq!(c[(3, 4)], 507.0);
        assert!(p.crop(7, 0, 4, 4).is_none());
        assert!(p.crop(-1, 0, 2, 2).is_none());
    }
}
