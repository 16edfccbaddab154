use crate::error::{Error, Result};
use crate::image::Plane;
use crate::scalar::Real;

/// Discretised intensities in `[0, levels)`, with an optional validity mask
/// (pixels outside the mask carry label 0 and never enter a histogram).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPlane {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    levels: usize,
    mask: Option<Vec<bool>>,
}

impl LabelPlane {
    pub fn new(height: usize, width: usize, labels: Vec<u16>, levels: usize) -> Result<Self> {
        Self::with_mask(height, width, labels, levels, None)
    }

    pub fn with_mask(
        height: usize,
        width: usize,
        labels: Vec<u16>,
        levels: usize,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if levels < 2 || levels > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("level count {levels}")));
        }
        if labels.len() != height * width || mask.as_ref().is_some_and(|m| m.len() != labels.len()) {
            return Err(Error::ShapeMismatch(format!("label plane {height}x{width}")));
        }
        if labels.iter().any(|&l| l as usize >= levels) {
            return Err(Error::InvalidArgument("label exceeds level count".into()));
        }
        Ok(Self { height, width, labels, levels, mask })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[idx])
    }

    /// Label at `(y, x)` if inside the plane and valid.
    #[inline]
    pub fn valid_label(&self, y: i64, x: i64) -> Option<u16> {
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            return None;
        }
        let idx = y as usize * self.width + x as usize;
        self.is_valid(idx).then(|| self.labels[idx])
    }

    /// Number of distinct labels among valid pixels.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.levels];
        for (i, &l) in self.labels.iter().enumerate() {
            if self.is_valid(i) {
                seen[l as usize] = true;
            }
        }
        seen.into_iter().filter(|&s| s).count()
    }

    /// Applies a label permutation (used to check relabeling invariance).
    pub fn relabel(&self, perm: &[u16]) -> Result<Self> {
        if perm.len() != self.levels {
            return Err(Error::InvalidArgument("permutation length".into()));
        }
        let labels = self.labels.iter().map(|&l| perm[l as usize]).collect();
        Self::with_mask(self.height, self.width, labels, self.levels, self.mask.clone())
    }
}

#[derive(Clone, Debug)]
pub struct Quantized {
    pub labels: LabelPlane,
    /// All valid pixels share one value; every label is 0.
    pub degenerate: bool,
}

/// Equal-count (quantile) binning into `levels` labels.
pub fn quantize_equal_count<T: Real>(p: &Plane<T>, levels: usize) -> Result<Quantized> {
    quantize_masked(p, None, levels)
}

/// Equal-count binning restricted to pixels where `mask` is true.
///
/// Pixels are ranked by value, then raster index; each run of equal values
/// takes the bin of its first rank, `floor(rank * levels / n)`, so tied
/// pixels never straddle a bin boundary.
pub fn quantize_masked<T: Real>(p: &Plane<T>, mask: Option<&[bool]>, levels: usize) -> Result<Quantized> {
    if levels < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 levels, got {levels}")));
    }
    if p.is_empty() {
        return Err(Error::EmptyPlane);
    }
    if mask.is_some_and(|m| m.len() != p.len()) {
        return Err(Error::ShapeMismatch("mask length".into()));
    }
    let data = p.as_slice();
    let mut order: Vec<(T, u32)> = (0..data.len())
        .filter(|&i| mask.map_or(true, |m| m[i]))
        .map(|i| (data[i], i as u32))
        .collect();
    order.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1))
    });

    let n = order.len();
    let mut labels = vec![0u16; data.len()];
    let mut degenerate = true;
    if n > 0 {
        let mut run_start = 0;
        let mut run_label = 0u16;
        for (rank, &(v, idx)) in order.iter().enumerate() {
            if rank == 0 || v != order[run_start].0 {
                run_start = rank;
                run_label = ((rank as u64 * levels as u64) / n as u64) as u16;
                if rank > 0 {
                    degenerate = false;
                }
            }
            labels[idx as usize] = run_label;
        }
    }
    Ok(Quantized {
        labels: LabelPlane::with_mask(p.height(), p.width(), labels, levels, mask.map(<[bool]>::to_vec))?,
        degenerate,
    })
}
