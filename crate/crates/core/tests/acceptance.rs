use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmcyto::dataset::{
    make_folds, plan_partitions, reference_cohort, reference_partition_map, synth_phantom, Phantom, PhantomSpec, Phase,
};
use mmcyto::focus::select_best_focus;
use mmcyto::illum::{correct_channel, correct_image};
use mmcyto::image::{gaussian_filter, percentile, Modality, MultiChannelImage, Plane, ZStack};
use mmcyto::metrics::{aggregate_patient, compute_metrics, patient_confusion, roc_auc, ConfusionCounts};
use mmcyto::peaks::{detect_peaks, merge_across_z, NucleusRecord, PeakParams};
use mmcyto::pipeline::{
    export_pairs, process_slide, qc_filter, write_manifest, PatchPair, PipelineConfig, QcFlag, QcParams, SlidePair,
};
use mmcyto::registration::{
    mi_surface_with, register_stacks, CountMethod, GlobalParams, LabelPlane, RefineParams,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn registration_params() -> GlobalParams {
    GlobalParams { angle_grid_deg: (-45..=45).map(|a| a as f64).collect(), levels: 8, ..GlobalParams::default() }
}

fn correct_stack(z: &ZStack<f32>) -> ZStack<f32> {
    let levels = z.levels().iter().map(|l| correct_image(l).unwrap().0).collect();
    ZStack::new(levels, z.z_offsets_um().to_vec()).unwrap()
}

// ---------------------------------------------------------------- MI oracle

fn random_labels(h: usize, w: usize, q: usize, masked: bool, rng: &mut ChaCha8Rng) -> LabelPlane {
    let labels = (0..h * w).map(|_| rng.gen_range(0..q as u16)).collect();
    let mask = masked.then(|| (0..h * w).map(|_| rng.gen_bool(0.8)).collect());
    LabelPlane::with_mask(h, w, labels, q, mask).unwrap()
}

/// Per-offset joint histogram, textbook MI.
fn histogram_mi(f: &LabelPlane, m: &LabelPlane, oy: i64, ox: i64) -> (f64, u64) {
    let (qf, qm) = (f.levels(), m.levels());
    let mut joint = vec![0u64; qf * qm];
    let mut n = 0u64;
    for y in 0..f.height() as i64 {
        for x in 0..f.width() as i64 {
            if let (Some(a), Some(b)) = (f.valid_label(y, x), m.valid_label(y + oy, x + ox)) {
                joint[a as usize * qm + b as usize] += 1;
                n += 1;
            }
        }
    }
    if n == 0 {
        return (0.0, 0);
    }
    let nf = n as f64;
    let pa: Vec<f64> = (0..qf).map(|i| joint[i * qm..(i + 1) * qm].iter().sum::<u64>() as f64 / nf).collect();
    let pb: Vec<f64> = (0..qm).map(|j| (0..qf).map(|i| joint[i * qm + j]).sum::<u64>() as f64 / nf).collect();
    let mut mi = 0.0;
    for i in 0..qf {
        for j in 0..qm {
            let p = joint[i * qm + j] as f64 / nf;
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    (mi, n)
}

fn mi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for case in 0..100 {
        let (hf, wf) = (rng.gen_range(4..=64), rng.gen_range(4..=64));
        let (hm, wm) = (rng.gen_range(4..=64), rng.gen_range(4..=64));
        let q = rng.gen_range(2..=8);
        let r = rng.gen_range(0..=8usize);
        let base = (rng.gen_range(-4..=8i64), rng.gen_range(-4..=8i64));
        let f = random_labels(hf, wf, q, case % 3 == 0, &mut rng);
        let m = random_labels(hm, wm, rng.gen_range(2..=q), case % 4 == 1, &mut rng);
        let s = mi_surface_with(&f, &m, base, r, 1, CountMethod::Fft).map_err(|e| e.to_string())?;
        for ((dy, dx), mi, overlap) in s.iter() {
            let (want, n) = histogram_mi(&f, &m, base.0 + dy, base.1 + dx);
            ensure(overlap == n, || format!("case {case} offset ({dy},{dx}): overlap {overlap} vs {n}"))?;
            if n == 0 {
                continue;
            }
            worst = worst.max((mi - want).abs());
            compared += 1;
        }
    }
    ensure(worst < 1e-9, || format!("max |fft - histogram| = {worst:.3e}"))?;
    Ok(format!("100 pairs, {compared} offsets, max |diff| {worst:.2e}"))
}

// ------------------------------------------------------ phantom registration

fn phantom_registration() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + i);
        let theta = rng.gen_range(-30.0..=30.0);
        let r = rng.gen_range(0.0..=200.0);
        let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let spec = PhantomSpec {
            bf_levels: 1,
            fl_levels: 1,
            transform: PhantomSpec::centered_transform(1024, 696, theta, (r * dir.cos(), r * dir.sin())),
            fl_slide_px: Some(696),
            n_nuclei: 150,
            min_separation_px: 40.0,
            jitter_px: 0.0,
            ..PhantomSpec::default()
        };
        let t0 = Instant::now();
        let ph = synth_phantom(i, &spec).map_err(|e| e.to_string())?;
        let fl = correct_stack(&ph.fl);
        let reg = register_stacks(&ph.bf, &fl, &registration_params(), 64).map_err(|e| e.to_string())?;
        let truth = ph.truth.transform;
        let dth = (reg.transform.theta_deg() - truth.theta_deg()).abs();
        let dt = (reg.transform.tx_px - truth.tx_px).abs().max((reg.transform.ty_px - truth.ty_px).abs());
        eprintln!("  phantom {i}: dtheta {dth:.3} dt {dt:.3} [{:.1}s]", t0.elapsed().as_secs_f64());
        worst = (worst.0.max(dth), worst.1.max(dt));
        if dth > 0.2 || dt > 1.0 {
            failures.push(i);
        }
    }
    let detail = format!("max |dtheta| {:.3} deg, max |dt| {:.3} px", worst.0, worst.1);
    if failures.is_empty() {
        Ok(format!("20/20 recovered; {detail}"))
    } else {
        Err(format!("{}/20 recovered (failed seeds {failures:?}); {detail}", 20 - failures.len()))
    }
}

// ---------------------------------------------------- per-nucleus refinement

/// Large slide with room for the full FL search window around every nucleus.
fn refinement_spec(seed: u64) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = rng.gen_range(-30.0..=30.0);
    PhantomSpec {
        slide_id: format!("r{seed}"),
        slide_px: 2048,
        n_nuclei: 18,
        transform: PhantomSpec::centered_transform(2048, 1392, theta, (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0))),
        bf_levels: 3,
        fl_levels: 3,
        bf_margin_px: 140.0,
        fl_margin_px: 392.0,
        min_separation_px: 180.0,
        ..PhantomSpec::default()
    }
}

fn nucleus_records(ph: &Phantom) -> Vec<NucleusRecord> {
    ph.truth
        .nuclei
        .iter()
        .map(|n| NucleusRecord { slide_id: ph.truth.spec.slide_id.clone(), x_px: n.x_px, y_px: n.y_px, score: 1.0, source_z: 0 })
        .collect()
}

fn per_nucleus_refinement() -> Outcome {
    let cfg = PipelineConfig::default();
    let (mut total, mut failed, mut border, mut err_sum) = (0usize, 0usize, 0usize, 0.0f64);
    let mut seed = 0u64;
    while total < 500 {
        let spec = refinement_spec(seed);
        let ph = synth_phantom(500 + seed, &spec).map_err(|e| e.to_string())?;
        let fl = correct_stack(&ph.fl);
        let slides = SlidePair {
            slide_id: &spec.slide_id,
            patient_id: "P",
            bf: &ph.bf,
            fl: &fl,
            transform: &ph.truth.transform,
        };
        let out = process_slide(&nucleus_records(&ph), &slides, &cfg).map_err(|e| e.to_string())?;
        border += out.border;
        for p in &out.pairs {
            let n = ph
                .truth
                .nuclei
                .iter()
                .find(|n| n.x_px == p.x_px && n.y_px == p.y_px)
                .ok_or("pair without a phantom nucleus")?;
            total += 1;
            if p.qc_flags.contains(&QcFlag::FailedRegistration) {
                failed += 1;
                continue;
            }
            let (dy, dx) = (p.refine_offset.0 as f64 - n.residual_dy, p.refine_offset.1 as f64 - n.residual_dx);
            err_sum += (dy * dy + dx * dx).sqrt();
        }
        seed += 1;
    }
    let scored = total - failed;
    ensure(scored > 0, || "every refinement failed".into())?;
    let mean = err_sum / scored as f64;
    let detail = format!(
        "{total} nuclei on {seed} slides, mean error {mean:.3} px, failed-registration rate {:.2}% ({failed}), border skips {border}",
        100.0 * failed as f64 / total as f64
    );
    ensure(mean <= 1.0, || detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------- illumination

/// Small bright dots on a flat floor plus a linear ramp; returns the plane
/// and a background mask (pixels far from every dot).
fn bias_phantom(n: usize, rng: &mut ChaCha8Rng) -> (Plane<f64>, Vec<bool>) {
    let dots: Vec<(f64, f64)> = (0..60).map(|_| (rng.gen_range(8.0..n as f64 - 8.0), rng.gen_range(8.0..n as f64 - 8.0))).collect();
    let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let strength = rng.gen_range(0.5..2.0);
    let (c, s) = (dir.cos(), dir.sin());
    let half = n as f64 / 2.0;
    let mut mask = vec![true; n * n];
    let p = Plane::from_fn(n, n, |y, x| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = 0.1 + strength * (0.5 + ((xf - half) * c + (yf - half) * s) / n as f64);
        for &(dx, dy) in &dots {
            let d2 = (xf - dx).powi(2) + (yf - dy).powi(2);
            v += (-d2 / (2.0 * 1.5 * 1.5)).exp();
            if d2 < 100.0 {
                mask[y * n + x] = false;
            }
        }
        v
    });
    (p, mask)
}

fn std_over(p: &Plane<f64>, mask: &[bool]) -> f64 {
    let v: Vec<f64> = p.as_slice().iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn illumination() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_ratio = 0.0f64;
    let mut clipped = 0usize;
    for _ in 0..10 {
        let n = 256;
        let (mut p, mask) = bias_phantom(n, &mut rng);
        // A few saturating outliers.
        for _ in 0..3 {
            let (y, x) = (rng.gen_range(0..n), rng.gen_range(0..n));
            p[(y, x)] += 500.0;
        }
        let out = correct_channel(&p).map_err(|e| e.to_string())?;
        ensure(!out.low_contrast, || "bias phantom flagged low contrast".into())?;
        let q = &out.plane;
        ensure(q.as_slice().iter().all(|v| (0.0..=1.0).contains(v)), || "output outside [0, 1]".into())?;

        // Background spread relative to the dot contrast, before and after.
        let dot_level = |img: &Plane<f64>| percentile(img, 0.999).unwrap() - percentile(img, 0.5).unwrap();
        let before = std_over(&p, &mask) / dot_level(&p);
        let after = std_over(q, &mask) / dot_level(q);
        worst_ratio = worst_ratio.max(after / before);

        let d: Vec<f64> = {
            let low = gaussian_filter(&p, 0.1 * n as f64).unwrap();
            p.as_slice().iter().zip(low.as_slice()).map(|(a, b)| a - b).collect()
        };
        let dp = Plane::new(n, n, d.clone(), 1.0).unwrap();
        let cap = 4.0 * percentile(&dp, 0.99).unwrap();
        for (i, &v) in d.iter().enumerate() {
            if v > cap {
                ensure(q.as_slice()[i] == 1.0, || format!("pixel {i} above cap maps to {}", q.as_slice()[i]))?;
                clipped += 1;
            }
        }
    }
    ensure(clipped > 0, || "no pixel exceeded the cap".into())?;
    let reduction = 100.0 * (1.0 - worst_ratio);
    ensure(reduction >= 90.0, || format!("background spread reduced by only {reduction:.1}%"))?;
    Ok(format!("worst background reduction {reduction:.1}%, {clipped} capped pixels all exactly 1.0"))
}

// -------------------------------------------------------------------- focus

fn focus_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 96;
    for trial in 0..200 {
        let levels: usize = rng.gen_range(3..=11);
        let sharp = rng.gen_range(0..levels);
        let modality = if trial % 2 == 0 { Modality::Fl } else { Modality::Bf };
        let base: Vec<Plane<f64>> = (0..modality.channel_count())
            .map(|_| {
                let noise = Plane::from_fn(n, n, |_, _| rng.gen::<f64>());
                let tex = gaussian_filter(&noise, 1.0).unwrap();
                if modality == Modality::Bf {
                    tex.map(|v| 0.3 + 0.6 * v)
                } else {
                    tex
                }
            })
            .collect();
        let step = rng.gen_range(0.5..1.5);
        let stack: Vec<MultiChannelImage<f64>> = (0..levels)
            .map(|k| {
                let sigma = step * k.abs_diff(sharp) as f64;
                let chans = base.iter().map(|c| if sigma > 0.0 { gaussian_filter(c, sigma).unwrap() } else { c.clone() }).collect();
                MultiChannelImage::new(modality, chans).unwrap()
            })
            .collect();
        let z = ZStack::new(stack, ZStack::<f64>::centered_offsets(levels, 0.4)).unwrap();
        let sel = select_best_focus(&z, 24.0).map_err(|e| e.to_string())?;
        ensure(sel.index == sharp && !sel.low_contrast, || format!("stack {trial}: picked {} of {levels}, sharp {sharp}", sel.index))?;
    }
    for levels in 1..=11 {
        let flat = MultiChannelImage::new(Modality::Fl, vec![Plane::<f64>::filled(32, 32, 0.4); 4]).unwrap();
        let z = ZStack::new(vec![flat; levels], ZStack::<f64>::centered_offsets(levels, 0.4)).unwrap();
        let sel = select_best_focus(&z, 24.0).map_err(|e| e.to_string())?;
        ensure(sel.index == (levels - 1) / 2 && sel.low_contrast, || format!("constant stack of {levels}: {sel:?}"))?;
    }
    Ok("200/200 stacks correct; constant stacks give the middle level with low contrast".into())
}

// -------------------------------------------------------------------- peaks

fn bump_map(h: usize, w: usize, bumps: &[(f64, f64, f64)]) -> Plane<f64> {
    Plane::from_fn(h, w, |y, x| {
        bumps
            .iter()
            .map(|&(by, bx, a)| a * (-((y as f64 - by).powi(2) + (x as f64 - bx).powi(2)) / (2.0 * 1.2 * 1.2)).exp())
            .fold(0.0, f64::max)
    })
}

fn peak_detection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let params = PeakParams::default();
    let f = params.downsample as f64;
    for trial in 0..50 {
        // Bumps on a jittered grid, well separated.
        let mut bumps = Vec::new();
        for gy in 0..6 {
            for gx in 0..6 {
                let a = rng.gen_range(0.05..1.0);
                bumps.push((8.0 + 12.0 * gy as f64 + rng.gen_range(-2.0..2.0), 8.0 + 12.0 * gx as f64 + rng.gen_range(-2.0..2.0), a));
            }
        }
        let map = bump_map(80, 80, &bumps);
        let found = detect_peaks(&map, "s", 0, &params).map_err(|e| e.to_string())?;
        for r in &found {
            let near = bumps
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 * f - r.y_px).powi(2) + (a.1 * f - r.x_px).powi(2);
                    let db = (b.0 * f - r.y_px).powi(2) + (b.1 * f - r.x_px).powi(2);
                    da.total_cmp(&db)
                })
                .expect("bumps");
            ensure(near.2 > 0.5, || format!("trial {trial}: bump of height {:.3} detected", near.2))?;
        }
        let strong = bumps.iter().filter(|b| b.2 > 0.5).count();
        ensure(found.len() <= strong, || format!("trial {trial}: {} detections for {strong} bumps above 0.5", found.len()))?;

        let mut last = usize::MAX;
        for k in 1..=20 {
            let p = PeakParams { threshold: k as f64 * 0.05, ..params };
            let c = detect_peaks(&map, "s", 0, &p).map_err(|e| e.to_string())?.len();
            ensure(c <= last, || format!("trial {trial}: count rose to {c} at threshold {:.2}", p.threshold))?;
            last = c;
        }

        // Three levels with disjoint detections; all survive the merge.
        let levels: Vec<Vec<NucleusRecord>> = (0..3)
            .map(|z| {
                let own: Vec<(f64, f64, f64)> = bumps.iter().skip(z).step_by(3).map(|&(y, x, _)| (y, x, 0.9)).collect();
                detect_peaks(&bump_map(80, 80, &own), "s", z, &params).unwrap()
            })
            .collect();
        let merged = merge_across_z(&levels, 8.0).map_err(|e| e.to_string())?;
        for r in levels.iter().flatten() {
            ensure(
                merged.iter().any(|m| (m.x_px - r.x_px).abs() <= 8.0 && (m.y_px - r.y_px).abs() <= 8.0),
                || format!("trial {trial}: level {} detection lost in merge", r.source_z),
            )?;
        }
    }
    Ok("50 heatmaps: no bump <= 0.5 detected, counts monotone over 20 thresholds, z-merge keeps every level".into())
}

// ----------------------------------------------------------------------- QC

fn dummy_pair(i: usize, x: f64, y: f64, offset: (i64, i64), contrast: f64) -> PatchPair<f32> {
    let bf = MultiChannelImage::new(Modality::Bf, vec![Plane::<f32>::zeros(4, 4); 3]).unwrap();
    let fl = MultiChannelImage::new(Modality::Fl, vec![Plane::<f32>::zeros(4, 4); 4]).unwrap();
    PatchPair {
        id: format!("s_{i:06}"),
        patient_id: "P".into(),
        slide_id: "s".into(),
        x_px: x,
        y_px: y,
        bf_patch: bf,
        fl_patch: fl,
        refine_offset: offset,
        mi_nats: 0.5,
        focus_bf: 0,
        focus_fl: 0,
        contrast_fl: contrast,
        qc_flags: vec![],
        label: None,
        misalignment_px: 0,
    }
}

fn qc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let params = QcParams::default();
    for trial in 0..100 {
        let n = rng.gen_range(10..300);
        let drift = (rng.gen_range(-3..=3i64), rng.gen_range(-3..=3i64));
        let odd = rng.gen_range(0..n);
        let pairs: Vec<PatchPair<f32>> = (0..n)
            .map(|i| {
                let jitter = (rng.gen_range(-1..=1i64), rng.gen_range(-1..=1i64));
                let offset = if i == odd { (drift.0 + 20, drift.1 - 20) } else { (drift.0 + jitter.0, drift.1 + jitter.1) };
                // The odd pair always has the best contrast, so only consistency can reject it.
                let contrast = if i == odd { 10.0 } else { rng.gen_range(0.0..1.0) };
                dummy_pair(i, rng.gen_range(0.0..4000.0), rng.gen_range(0.0..4000.0), offset, contrast)
            })
            .collect();
        let mut by_contrast: Vec<(f64, usize)> = pairs.iter().enumerate().map(|(i, p)| (p.contrast_fl, i)).collect();
        by_contrast.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expect_low = (0.05 * n as f64).floor() as usize;
        let lowest: Vec<String> = by_contrast[..expect_low].iter().map(|&(_, i)| pairs[i].id.clone()).collect();
        let odd_id = pairs[odd].id.clone();

        let (_, rejected, report) = qc_filter(pairs, &params).map_err(|e| e.to_string())?;
        let low: Vec<&PatchPair<f32>> = rejected.iter().filter(|p| p.qc_flags.contains(&QcFlag::LowContrast)).collect();
        ensure(low.len() == expect_low && report.low_contrast == expect_low, || {
            format!("trial {trial}: n={n}, {} low-contrast removals, expected {expect_low}", low.len())
        })?;
        ensure(low.iter().all(|p| lowest.contains(&p.id)), || format!("trial {trial}: removed pair is not among the lowest"))?;
        ensure(
            rejected.iter().any(|p| p.id == odd_id && p.qc_flags.contains(&QcFlag::NeighborInconsistent)),
            || format!("trial {trial}: inconsistent pair not flagged"),
        )?;
    }
    Ok("100 slides: floor(0.05 n) lowest-contrast pairs removed, inconsistent pair always flagged".into())
}

// -------------------------------------------------------------------- folds

fn fold_integrity() -> Outcome {
    let cohort = reference_cohort();
    let patients: Vec<_> = cohort.iter().map(|c| c.record.clone()).collect();
    let counts: BTreeMap<String, usize> = cohort.iter().map(|c| (c.record.patient_id.clone(), c.patches)).collect();
    let map = reference_partition_map();
    let plan = plan_partitions(&patients, &counts, 4, Some(&map)).map_err(|e| e.to_string())?;
    let totals: Vec<usize> = plan.stats.iter().map(|s| s.total_patches).collect();
    let people: Vec<usize> = plan.stats.iter().map(|s| s.cancer_patients + s.healthy_patients).collect();
    ensure(totals == [190_560, 184_519, 190_292, 201_194], || format!("partition totals {totals:?}"))?;
    ensure(people == [5, 5, 4, 5], || format!("patients per partition {people:?}"))?;
    for phase in [Phase::InitialValidation, Phase::FullTraining] {
        for fold in make_folds(&plan, phase).map_err(|e| e.to_string())? {
            let (train, val, test) = plan.roles(&fold);
            let all: Vec<&str> = train.iter().chain(&val).chain(&test).copied().collect();
            let mut uniq = all.clone();
            uniq.sort();
            uniq.dedup();
            ensure(uniq.len() == all.len(), || format!("{phase:?} fold {}: a patient appears in two roles", fold.index))?;
            ensure(uniq.len() == patients.len(), || format!("{phase:?} fold {}: {} of 19 patients used", fold.index, uniq.len()))?;
        }
    }
    Ok(format!("partition totals {totals:?}, patients {people:?}, no overlap in either phase"))
}

// ------------------------------------------------------------------ metrics

fn metrics_arithmetic() -> Outcome {
    let r = compute_metrics(&ConfusionCounts::new(415_040, 34_331, 12_483, 114_151)).map_err(|e| e.to_string())?;
    ensure((r.accuracy - 0.91873).abs() <= 1e-5, || format!("accuracy {}", r.accuracy))?;
    ensure((r.f1 - 0.82984).abs() <= 1e-5, || format!("f1 {}", r.f1))?;

    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let scores: Vec<f64> = (0..50).map(|_| (rng.gen_range(0.0..1.0f64) * 10.0).round() / 10.0).collect();
        let mut truth: Vec<bool> = (0..50).map(|_| rng.gen_bool(0.4)).collect();
        truth[0] = true;
        truth[1] = false;
        let auc = roc_auc(&scores, &truth).map_err(|e| e.to_string())?;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in (0..50).filter(|&i| truth[i]) {
            for j in (0..50).filter(|&j| !truth[j]) {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        worst = worst.max((auc - wins / pairs).abs());
    }
    ensure(worst <= 1e-12, || format!("auc differs from pairwise count by {worst:.2e}"))?;
    Ok(format!("accuracy {:.5}, f1 {:.5}; auc max |diff| {worst:.1e} over 200 sets", r.accuracy, r.f1))
}

fn patient_aggregation() -> Outcome {
    let mut cells = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for i in 0..8 {
        let id = format!("N{i}");
        // One healthy patient looks positive.
        let share = if i == 0 { 0.7 } else { 0.1 + 0.05 * i as f64 };
        cells.insert(id.clone(), (0..100).map(|k| if (k as f64) < share * 100.0 { 0.9 } else { 0.1 }).collect::<Vec<f64>>());
        truth.insert(id, false);
    }
    for i in 0..6 {
        let id = format!("P{i}");
        let share = 0.6 + 0.06 * i as f64;
        cells.insert(id.clone(), (0..100).map(|k| if (k as f64) < share * 100.0 { 0.8 } else { 0.2 }).collect::<Vec<f64>>());
        truth.insert(id, true);
    }
    let preds = aggregate_patient(&cells, 0.5, 0.6).map_err(|e| e.to_string())?;
    let c = patient_confusion(&preds, &truth).map_err(|e| e.to_string())?;
    let r = compute_metrics(&c).map_err(|e| e.to_string())?;
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    ensure(c.fn_ == 0 && c.fp == 1, || format!("{c:?}"))?;
    let got = (round2(r.f1), round2(r.accuracy), round2(r.recall), round2(r.precision));
    ensure(got == (0.92, 0.93, 1.0, 0.86), || format!("f1/acc/recall/precision {got:?}"))?;
    Ok(format!("FN 0, FP 1, f1 {:.2}, accuracy {:.2}, recall {:.2}, precision {:.2}", r.f1, r.accuracy, r.recall, r.precision))
}

// -------------------------------------------------------------- determinism

fn run_pipeline(dir: &Path) -> Result<Vec<u8>, String> {
    let spec = PhantomSpec {
        slide_id: "det".into(),
        n_nuclei: 40,
        min_separation_px: 60.0,
        bf_levels: 3,
        fl_levels: 3,
        bf_margin_px: 90.0,
        fl_margin_px: 140.0,
        fl_slide_px: Some(696),
        transform: PhantomSpec::centered_transform(1024, 696, 7.0, (12.0, -9.0)),
        ..PhantomSpec::default()
    };
    let ph = synth_phantom(77, &spec).map_err(|e| e.to_string())?;
    let fl = correct_stack(&ph.fl);
    let reg = register_stacks(&ph.bf, &fl, &registration_params(), 64).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig { patch_size: 128, fl_window: 256, refine: RefineParams { radius: 12, ..RefineParams::default() }, center_sigma: 32.0, ..PipelineConfig::default() };
    let slides = SlidePair { slide_id: "det", patient_id: "P", bf: &ph.bf, fl: &fl, transform: &reg.transform };
    let out = process_slide(&nucleus_records(&ph), &slides, &cfg).map_err(|e| e.to_string())?;
    let (kept, _, _) = qc_filter(out.pairs, &cfg.qc).map_err(|e| e.to_string())?;
    let records = export_pairs(&kept, dir).map_err(|e| e.to_string())?;
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &records).map_err(|e| e.to_string())?;
    let mut bytes = std::fs::read(&manifest).map_err(|e| e.to_string())?;
    for r in &records {
        for p in [&r.bf_path, &r.fl_path] {
            bytes.extend(std::fs::read(dir.join(p)).map_err(|e| e.to_string())?);
        }
    }
    Ok(bytes)
}

fn determinism() -> Outcome {
    let mut outputs = Vec::new();
    for threads in [1, 8] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        outputs.push(pool.install(|| run_pipeline(dir.path()))?);
    }
    ensure(outputs[0] == outputs[1], || "manifest or patch bytes differ between 1 and 8 threads".into())?;
    Ok(format!("manifest + patches identical ({} bytes) with 1 and 8 threads", outputs[0].len()))
}

// ---------------------------------------------------------------------- main

struct Criterion {
    name: &'static str,
    budget_s: Option<f64>,
    run: fn() -> Outcome,
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { name: "mi oracle", budget_s: Some(60.0), run: mi_oracle },
        Criterion { name: "phantom registration", budget_s: Some(300.0), run: phantom_registration },
        Criterion { name: "per-nucleus refinement", budget_s: None, run: per_nucleus_refinement },
        Criterion { name: "illumination correction", budget_s: None, run: illumination },
        Criterion { name: "focus selection", budget_s: None, run: focus_selection },
        Criterion { name: "peak detection", budget_s: None, run: peak_detection },
        Criterion { name: "qc", budget_s: None, run: qc },
        Criterion { name: "fold integrity", budget_s: None, run: fold_integrity },
        Criterion { name: "metrics arithmetic", budget_s: None, run: metrics_arithmetic },
        Criterion { name: "patient aggregation", budget_s: None, run: patient_aggregation },
        Criterion { name: "determinism", budget_s: None, run: determinism },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        if let (Ok(d), Some(b)) = (&outcome, c.budget_s) {
            if secs > b {
                outcome = Err(format!("{d}; took {secs:.1}s, budget {b:.0}s"));
            }
        }
        match outcome {
            Ok(d) => println!("PASS  {:<24} {d} [{secs:.1}s]", c.name),
            Err(d) => {
                failed += 1;
                println!("FAIL  {:<24} {d} [{secs:.1}s]", c.name)
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
