use crate::error::{Error, Result};
use crate::image::Plane;
use crate::pipeline::PatchPair;
use crate::scalar::Real;

/// Shifts used for the robustness variants.
pub const MISALIGNMENT_SWEEP: [usize; 4] = [0, 4, 8, 16];

/// Mirror index for `i < 0` about the left edge (`-1 -> 0`, `-2 -> 1`).
fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn shift_plane<T: Real>(p: &Plane<T>, d: usize) -> Plane<T> {
    let w = p.width();
    let mut out = p.clone();
    for y in 0..p.height() {
        let src = p.row(y);
        let dst = &mut out.as_mut_slice()[y * w..(y + 1) * w];
        for (x, v) in dst.iter_mut().enumerate() {
            *v = src[mirror(x as i64 - d as i64, w)];
        }
    }
    out
}

/// Moves the BF patch `d` pixels in +x (column `c` takes old column
/// `c - d`), mirroring into the vacated strip. FL is untouched.
pub fn inject_misalignment<T: Real>(pair: &PatchPair<T>, d: usize) -> Result<PatchPair<T>> {
    if d >= pair.bf_patch.width() {
        return Err(Error::ShiftTooLarge(d));
    }
    let mut out = pair.clone();
    if d > 0 {
        out.bf_patch = pair.bf_patch.map_channels(|c| shift_plane(c, d))?;
    }
    out.misalignment_px += d;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Modality, MultiChannelImage};
    use proptest::prelude::*;

    fn pair(w: usize) -> PatchPair<f32> {
        let ramp = Plane::<f32>::from_fn(3, w, |y, x| (y * 1000 + x) as f32);
        PatchPair {
            id: "a".into(),
            patient_id: "p".into(),
            slide_id: "s".into(),
            x_px: 0.0,
            y_px: 0.0,
            bf_patch: MultiChannelImage::new(Modality::Bf, vec![ramp.clone(); 3]).unwrap(),
            fl_patch: MultiChannelImage::new(Modality::Fl, vec![ramp; 4]).unwrap(),
            refine_offset: (0, 0),
            mi_nats: 0.0,
            focus_bf: 0,
            focus_fl: 0,
            contrast_fl: 0.0,
            qc_flags: vec![],
            label: None,
            misalignment_px: 0,
        }
    }

    #[test]
    fn zero_shift_is_identity() {
        let p = pair(32);
        let q = inject_misalignment(&p, 0).unwrap();
        assert_eq!(q.bf_patch.channels(), p.bf_patch.channels());
        assert_eq!(q.misalignment_px, 0);
    }

    #[test]
    fn shift_by_eight() {
        let p = pair(32);
        let q = inject_misalignment(&p, 8).unwrap();
        for c in 8..32 {
            assert_eq!(q.bf_patch.channels()[1][(2, c)], p.bf_patch.channels()[1][(2, c - 8)]);
        }
        // Mirrored strip.
        assert_eq!(q.bf_patch.channels()[0][(0, 7)], 0.0);
        assert_eq!(q.bf_patch.channels()[0][(0, 0)], 7.0);
        assert_eq!(q.fl_patch.channels(), p.fl_patch.channels());
        assert_eq!(q.misalignment_px, 8);
    }

    #[test]
    fn too_large() {
        assert!(matches!(inject_misalignment(&pair(256), 256), Err(Error::ShiftTooLarge(256))));
    }

    proptest! {
        #[test]
        fn shifts_compose(a in 0usize..12, b in 0usize..12) {
            let p = pair(40);
            let twice = inject_misalignment(&inject_misalignment(&p, a).unwrap(), b).unwrap();
            let once = inject_misalignment(&p, a + b).unwrap();
            prop_assert_eq!(twice.misalignment_px, a + b);
            for c in (a + b)..40 {
                prop_assert_eq!(twice.bf_patch.channels()[0][(1, c)], once.bf_patch.channels()[0][(1, c)]);
            }
        }
    }
}
