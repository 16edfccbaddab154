use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use mmcyto::config::Config;
use mmcyto::dataset::{
    assign_labels, inject_misalignment, plan_partitions, read_patients_csv, synth_phantom, Label, Phase, PhantomSpec,
};
use mmcyto::illum::correct_image;
use mmcyto::image::{Modality, ZStack};
use mmcyto::io::{read_json, write_json, write_atomic, SlideDescriptor};
use mmcyto::metrics::{
    aggregate_patient, compute_metrics, confusion, patient_confusion, read_confusion_csv, roc_auc, write_confusion_csv,
    ConfusionCounts, MetricReport, PatientPrediction,
};
use mmcyto::peaks::{
    baseline_blob_detector, detect_peaks, merge_across_z, read_nucleus_csv, write_nucleus_csv, NucleusRecord,
    HEATMAP_DOWNSAMPLE,
};
use mmcyto::pipeline::{
    export_pairs, process_slide, qc_filter, read_manifest, write_manifest, ManifestRecord, QcReport, SlidePair,
};
use mmcyto::registration::{reduce_for_registration, register_stacks, TransformRecord};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mmcyto::Error),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Msg(String),
}

type Result<T = ()> = std::result::Result<T, CliError>;

fn input_err(path: &Path, message: impl ToString) -> CliError {
    CliError::Input { path: path.to_path_buf(), message: message.to_string() }
}

pub struct Context {
    pub cfg: Config,
    pub seed: u64,
}

fn base_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn correct_stack(stack: &ZStack<f32>) -> Result<ZStack<f32>> {
    let mut levels = Vec::with_capacity(stack.len());
    for (k, level) in stack.levels().iter().enumerate() {
        let (img, flags) = correct_image(level)?;
        for (c, low) in flags.iter().enumerate() {
            if *low {
                println!("z-level {k}, channel {}: low contrast, written as zeros", level.channel_names()[c]);
            }
        }
        levels.push(img);
    }
    Ok(ZStack::new(levels, stack.z_offsets_um().to_vec())?)
}

fn load_fl(path: &Path) -> Result<ZStack<f32>> {
    let (desc, stack) = SlideDescriptor::load(path)?;
    if desc.modality != Modality::Fl {
        return Err(input_err(path, "expected an FL slide"));
    }
    Ok(stack)
}

fn load_bf(path: &Path) -> Result<ZStack<f32>> {
    let (desc, stack) = SlideDescriptor::load(path)?;
    if desc.modality != Modality::Bf {
        return Err(input_err(path, "expected a BF slide"));
    }
    Ok(stack)
}

pub fn correct(_ctx: &Context, input: &Path, out: &Path) -> Result {
    let stack = load_fl(input)?;
    let corrected = correct_stack(&stack)?;
    SlideDescriptor::save(out, &corrected)?;
    println!("corrected {} z-levels -> {}", corrected.len(), out.display());
    Ok(())
}

pub fn register(ctx: &Context, fixed: &Path, moving: &Path, out: &Path, correct_moving: bool) -> Result {
    let bf = load_bf(fixed)?;
    let mut fl = load_fl(moving)?;
    if correct_moving {
        fl = correct_stack(&fl)?;
    }
    let reg = register_stacks(&bf, &fl, &ctx.cfg.register, ctx.cfg.register_coarse_side)?;
    write_json(out, &TransformRecord::new(reg.transform, reg.mi_nats))?;
    println!(
        "theta {:.2} deg, t ({:.2}, {:.2}) px, MI {:.4} nats -> {}",
        reg.transform.theta_deg(),
        reg.transform.tx_px,
        reg.transform.ty_px,
        reg.mi_nats,
        out.display()
    );
    Ok(())
}

/// Levels nearest to -2, 0 and +2 um, without repeats.
fn detection_levels(offsets: &[f64]) -> Vec<usize> {
    let mut picked: Vec<usize> = [-2.0, 0.0, 2.0]
        .iter()
        .map(|target: &f64| {
            (0..offsets.len())
                .min_by(|&a, &b| (offsets[a] - target).abs().total_cmp(&(offsets[b] - target).abs()).then(a.cmp(&b)))
                .expect("non-empty stack")
        })
        .collect();
    picked.sort_unstable();
    picked.dedup();
    picked
}

pub fn detect(ctx: &Context, bf: &Path, out: &Path, slide_id: &str) -> Result {
    let stack = load_bf(bf)?;
    let per_level = detection_levels(stack.z_offsets_um())
        .into_par_iter()
        .map(|z| {
            let reduced = reduce_for_registration(&stack.levels()[z]).downsample(HEATMAP_DOWNSAMPLE);
            let heat = baseline_blob_detector(&reduced, ctx.cfg.detector_sigma, 0.0)?;
            detect_peaks(&heat, slide_id, z, &ctx.cfg.peaks)
        })
        .collect::<mmcyto::Result<Vec<_>>>()?;
    let merged = merge_across_z(&per_level, ctx.cfg.merge_radius)?;
    write_nucleus_csv(out, &merged)?;
    println!("{} nuclei -> {}", merged.len(), out.display());
    Ok(())
}

pub struct ExtractInputs {
    pub bf: PathBuf,
    pub fl: PathBuf,
    pub transform: PathBuf,
    pub nuclei: PathBuf,
    pub out: PathBuf,
    pub patient_id: String,
    pub slide_id: Option<String>,
    pub correct: bool,
}

#[derive(Serialize)]
struct ExtractReport {
    nuclei: usize,
    border: usize,
    pairs: usize,
    failed_registration: usize,
}

pub fn extract(ctx: &Context, a: &ExtractInputs) -> Result {
    let bf = load_bf(&a.bf)?;
    let mut fl = load_fl(&a.fl)?;
    if a.correct {
        fl = correct_stack(&fl)?;
    }
    let rec: TransformRecord = read_json(&a.transform)?;
    let t = rec.transform()?;
    let nuclei = read_nucleus_csv(&a.nuclei)?;
    let slide_id = a
        .slide_id
        .clone()
        .or_else(|| nuclei.first().map(|n| n.slide_id.clone()))
        .unwrap_or_else(|| "slide".into());
    let slides = SlidePair { slide_id: &slide_id, patient_id: &a.patient_id, bf: &bf, fl: &fl, transform: &t };
    let done = process_slide(&nuclei, &slides, &ctx.cfg.pipeline)?;
    let records = export_pairs(&done.pairs, &a.out)?;
    write_manifest(&a.out.join("manifest.jsonl"), &records)?;
    let report = ExtractReport {
        nuclei: nuclei.len(),
        border: done.border,
        pairs: records.len(),
        failed_registration: records.iter().filter(|r| !r.qc_flags.is_empty()).count(),
    };
    write_json(&a.out.join("extract_report.json"), &report)?;
    println!(
        "{} nuclei: {} pairs ({} failed registration), {} at the border -> {}",
        report.nuclei,
        report.pairs,
        report.failed_registration,
        report.border,
        a.out.display()
    );
    Ok(())
}

/// Re-expresses a manifest path (relative to `from`) for a manifest in `to`.
fn rebase(rel: &Path, from: &Path, to: &Path) -> PathBuf {
    let same = match (from.canonicalize(), to.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => from == to,
    };
    if same || rel.is_absolute() {
        rel.to_path_buf()
    } else {
        let joined = from.join(rel);
        joined.canonicalize().unwrap_or(joined)
    }
}

pub fn qc(
    ctx: &Context,
    manifest: &Path,
    out: &Path,
    report_path: Option<&Path>,
    extract_report: Option<&Path>,
    patients: Option<&Path>,
) -> Result {
    let records = read_manifest(manifest)?;
    let base = base_dir(manifest);
    let pairs = records.par_iter().map(|r| r.to_pair(base)).collect::<mmcyto::Result<Vec<_>>>()?;
    let (kept, _, mut report) = qc_filter(pairs, &ctx.cfg.pipeline.qc)?;
    if let Some(p) = extract_report {
        let v: serde_json::Value = read_json(p)?;
        let border = v.get("border").and_then(|b| b.as_u64()).ok_or_else(|| input_err(p, "missing 'border' count"))?;
        report.add_border(border as usize);
    }
    let by_id: BTreeMap<&str, &ManifestRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    std::fs::create_dir_all(base_dir(out)).map_err(|e| input_err(base_dir(out), e))?;
    let mut kept_records: Vec<ManifestRecord> = kept
        .iter()
        .map(|p| {
            let mut r = by_id[p.id.as_str()].clone();
            r.bf_path = rebase(&r.bf_path, base, base_dir(out));
            r.fl_path = rebase(&r.fl_path, base, base_dir(out));
            r
        })
        .collect();
    if let Some(p) = patients {
        let counts = assign_labels(&mut kept_records, &read_patients_csv(p)?)?;
        println!("labels: {} positive, {} negative", counts.positive, counts.negative);
    }
    write_manifest(out, &kept_records)?;
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    print_qc(&report);
    Ok(())
}

fn print_qc(r: &QcReport) {
    println!(
        "input {}: border {}, low contrast {}, failed registration {}, neighbour inconsistent {}, exported {}",
        r.input, r.border, r.low_contrast, r.failed_registration, r.neighbor_inconsistent, r.exported
    );
}

pub fn plan_folds(
    ctx: &Context,
    patients: &Path,
    manifest: Option<&Path>,
    counts: Option<&Path>,
    partition_map: Option<&Path>,
    phase: Phase,
    out: &Path,
) -> Result {
    let patients = read_patients_csv(patients)?;
    let patch_counts: BTreeMap<String, usize> = match (manifest, counts) {
        (Some(m), _) => {
            let mut c = BTreeMap::new();
            for r in read_manifest(m)? {
                *c.entry(r.patient_id).or_insert(0) += 1;
            }
            c
        }
        (None, Some(p)) => read_json(p)?,
        (None, None) => return Err(CliError::Msg("plan-folds needs --manifest or --counts".into())),
    };
    let explicit: Option<BTreeMap<String, usize>> = partition_map.map(read_json).transpose()?;
    let plan = plan_partitions(&patients, &patch_counts, ctx.cfg.partitions, explicit.as_ref())?.with_phase(phase)?;
    for w in &plan.warnings {
        println!("warning: {w}");
    }
    for s in &plan.stats {
        println!(
            "partition {}: {} patients, {} patches, cancer ratio {:.3}",
            s.partition,
            s.cancer_patients + s.healthy_patients,
            s.total_patches,
            s.cancer_ratio
        );
    }
    write_json(out, &plan)?;
    Ok(())
}

pub fn perturb(manifest: &Path, out: &Path, shifts: &[usize]) -> Result {
    let records = read_manifest(manifest)?;
    let base = base_dir(manifest);
    let pairs = records.par_iter().map(|r| r.to_pair(base)).collect::<mmcyto::Result<Vec<_>>>()?;
    for &d in shifts {
        let dir = out.join(format!("shift_{d}"));
        let shifted = pairs.par_iter().map(|p| inject_misalignment(p, d)).collect::<mmcyto::Result<Vec<_>>>()?;
        let recs = export_pairs(&shifted, &dir)?;
        write_manifest(&dir.join("manifest.jsonl"), &recs)?;
        println!("shift {d} px: {} pairs -> {}", recs.len(), dir.display());
    }
    Ok(())
}

/// `id,score` lines after a header.
fn read_predictions(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("id,score") {
        return Err(input_err(path, "expected header 'id,score'"));
    }
    let mut out = BTreeMap::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, score) = line.trim().rsplit_once(',').ok_or_else(|| input_err(path, format!("line {}: expected id,score", n + 2)))?;
        let score: f64 = score.parse().map_err(|_| input_err(path, format!("line {}: bad score '{score}'", n + 2)))?;
        out.insert(id.to_string(), score);
    }
    Ok(out)
}

/// `(patient, score, positive truth)` per labelled manifest record.
fn scored_cells(manifest: &Path, predictions: &Path) -> Result<Vec<(String, f64, bool)>> {
    let records = read_manifest(manifest)?;
    let preds = read_predictions(predictions)?;
    records
        .iter()
        .map(|r| {
            let label = r.label.ok_or_else(|| input_err(manifest, format!("record '{}' has no label", r.id)))?;
            let score = preds.get(&r.id).ok_or_else(|| input_err(predictions, format!("no prediction for '{}'", r.id)))?;
            Ok((r.patient_id.clone(), *score, label == Label::Positive))
        })
        .collect()
}

pub fn eval(
    ctx: &Context,
    manifest: &Path,
    predictions: Option<&Path>,
    out: Option<&Path>,
    confusion_csv: Option<&Path>,
    model: &str,
) -> Result {
    // Fail on the manifest first so a missing manifest is what gets reported.
    read_manifest(manifest)?;
    let default_preds = base_dir(manifest).join("predictions.csv");
    let cells = scored_cells(manifest, predictions.unwrap_or(&default_preds))?;
    let scores: Vec<f64> = cells.iter().map(|c| c.1).collect();
    let truth: Vec<bool> = cells.iter().map(|c| c.2).collect();
    let pred: Vec<bool> = scores.iter().map(|&s| s > ctx.cfg.cell_threshold).collect();
    let counts = confusion(&pred, &truth)?;
    let mut report = compute_metrics(&counts)?;
    report.roc_auc = match roc_auc(&scores, &truth) {
        Ok(v) => Some(v),
        Err(mmcyto::Error::SingleClass) => None,
        Err(e) => return Err(e.into()),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Msg(e.to_string()))?;
    match out {
        Some(p) => write_json(p, &report)?,
        None => println!("{json}"),
    }
    if let Some(p) = confusion_csv {
        let mut rows = if p.exists() { read_confusion_csv(p)? } else { vec![] };
        rows.retain(|(m, _)| m != model);
        rows.push((model.to_string(), counts));
        write_confusion_csv(p, &rows)?;
    }
    print_metrics(&counts, &report);
    Ok(())
}

fn print_metrics(c: &ConfusionCounts, r: &MetricReport) {
    let auc = r.roc_auc.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "tn {} fp {} fn {} tp {}: f1 {:.4} accuracy {:.4} auc {auc} recall {:.4} precision {:.4}",
        c.tn, c.fp, c.fn_, c.tp, r.f1, r.accuracy, r.recall, r.precision
    );
}

#[derive(Serialize)]
struct PatientReport {
    cell_threshold: f64,
    patient_threshold: f64,
    patients: Vec<PatientPrediction>,
    confusion: ConfusionCounts,
    metrics: MetricReport,
}

pub fn aggregate(ctx: &Context, manifest: &Path, predictions: &Path, out: &Path) -> Result {
    let cells = scored_cells(manifest, predictions)?;
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut truth: BTreeMap<String, bool> = BTreeMap::new();
    for (patient, score, positive) in cells {
        if *truth.entry(patient.clone()).or_insert(positive) != positive {
            return Err(input_err(manifest, format!("patient '{patient}' has mixed labels")));
        }
        scores.entry(patient).or_default().push(score);
    }
    let preds = aggregate_patient(&scores, ctx.cfg.cell_threshold, ctx.cfg.patient_threshold)?;
    let counts = patient_confusion(&preds, &truth)?;
    let metrics = compute_metrics(&counts)?;
    for p in &preds {
        println!("{}: {}/{} positive cells ({:.3}) -> {}", p.patient_id, p.n_positive, p.n_cells, p.ratio, if p.positive { "positive" } else { "negative" });
    }
    print_metrics(&counts, &metrics);
    write_json(
        out,
        &PatientReport {
            cell_threshold: ctx.cfg.cell_threshold,
            patient_threshold: ctx.cfg.patient_threshold,
            patients: preds,
            confusion: counts,
            metrics,
        },
    )?;
    Ok(())
}

pub fn phantom(ctx: &Context, out: &Path, spec: Option<&Path>) -> Result {
    let spec: PhantomSpec = match spec {
        Some(p) => read_json(p)?,
        None => PhantomSpec::default(),
    };
    let ph = synth_phantom(ctx.seed, &spec)?;
    ph.save(out)?;
    let nuclei: Vec<NucleusRecord> = ph
        .truth
        .nuclei
        .iter()
        .map(|n| NucleusRecord { slide_id: spec.slide_id.clone(), x_px: n.x_px, y_px: n.y_px, score: 1.0, source_z: n.sharp_bf })
        .collect();
    write_nucleus_csv(&out.join("nuclei.csv"), &nuclei)?;
    write_atomic(&out.join("seed.txt"), format!("{}\n", ctx.seed).as_bytes())?;
    println!("phantom '{}' with {} nuclei -> {}", spec.slide_id, nuclei.len(), out.display());
    Ok(())
}
