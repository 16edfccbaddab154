//! `mmcyto`: batch front end for the BF/FL patch pipeline.
//!
//! Exit status: 0 on success, 1 on runtime or I/O errors (message on
//! stderr), 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mmcyto::config::Config;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "mmcyto", version, about = "Brightfield + fluorescence cytology patch pipeline")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key = value` file overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Flat-field correct every FL channel of a slide.
    Correct {
        #[arg(long)]
        input: PathBuf,
        /// Output slide descriptor; TIFFs are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Global rigid registration of a BF (fixed) and FL (moving) slide.
    Register {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flat-field correct the moving slide before registering.
        #[arg(long)]
        correct_moving: bool,
    },
    /// Baseline nucleus detector on the BF slide.
    Detect {
        #[arg(long)]
        bf: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "slide")]
        slide_id: String,
    },
    /// Per-nucleus patch extraction, refinement and focus selection.
    Extract(ExtractArgs),
    /// Contrast and neighbour-consistency filtering of a manifest.
    Qc {
        #[arg(long)]
        manifest: PathBuf,
        /// Manifest of the passing pairs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// `extract` report, for border bookkeeping.
        #[arg(long)]
        extract_report: Option<PathBuf>,
        /// Patients CSV; when given, kept pairs are labelled.
        #[arg(long)]
        patients: Option<PathBuf>,
    },
    /// Patient-level partitioning and fold plan.
    PlanFolds {
        #[arg(long)]
        patients: PathBuf,
        /// Patch counts per patient are taken from this manifest.
        #[arg(long, conflicts_with = "counts")]
        manifest: Option<PathBuf>,
        /// JSON object mapping patient id to patch count.
        #[arg(long)]
        counts: Option<PathBuf>,
        /// JSON object mapping patient id to partition index.
        #[arg(long)]
        partition_map: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PhaseArg::Initial)]
        phase: PhaseArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes misaligned copies of a manifest, one directory per shift.
    Perturb {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = mmcyto::dataset::MISALIGNMENT_SWEEP)]
        shifts: Vec<usize>,
    },
    /// Cell-level metrics of predictions against manifest labels.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// CSV `id,score`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Appends a `model,tn,fp,fn,tp` row here.
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        model: String,
    },
    /// Patient-level aggregation of cell predictions.
    Aggregate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic slide pair with ground truth.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        /// Phantom spec JSON; missing fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    bf: PathBuf,
    #[arg(long)]
    fl: PathBuf,
    /// Transform JSON from `register`.
    #[arg(long)]
    transform: PathBuf,
    /// Nucleus CSV from `detect` or any detector.
    #[arg(long)]
    nuclei: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "patient")]
    patient_id: String,
    /// Defaults to the slide id of the first nucleus.
    #[arg(long)]
    slide_id: Option<String>,
    /// Skip flat-field correction of the FL slide.
    #[arg(long)]
    no_correct: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PhaseArg {
    Initial,
    Full,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), commands::CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| commands::CliError::Msg(e.to_string()))?;
    }
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = commands::Context { cfg, seed: cli.seed };
    match cli.command {
        Command::Correct { input, out } => commands::correct(&ctx, &input, &out),
        Command::Register { fixed, moving, out, correct_moving } => commands::register(&ctx, &fixed, &moving, &out, correct_moving),
        Command::Detect { bf, out, slide_id } => commands::detect(&ctx, &bf, &out, &slide_id),
        Command::Extract(a) => commands::extract(
            &ctx,
            &commands::ExtractInputs {
                bf: a.bf,
                fl: a.fl,
                transform: a.transform,
                nuclei: a.nuclei,
                out: a.out,
                patient_id: a.patient_id,
                slide_id: a.slide_id,
                correct: !a.no_correct,
            },
        ),
        Command::Qc { manifest, out, report, extract_report, patients } => {
            commands::qc(&ctx, &manifest, &out, report.as_deref(), extract_report.as_deref(), patients.as_deref())
        }
        Command::PlanFolds { patients, manifest, counts, partition_map, phase, out } => {
            let phase = match phase {
                PhaseArg::Initial => mmcyto::dataset::Phase::InitialValidation,
                PhaseArg::Full => mmcyto::dataset::Phase::FullTraining,
            };
            commands::plan_folds(&ctx, &patients, manifest.as_deref(), counts.as_deref(), partition_map.as_deref(), phase, &out)
        }
        Command::Perturb { manifest, out, shifts } => commands::perturb(&manifest, &out, &shifts),
        Command::Eval { manifest, predictions, out, confusion, model } => {
            commands::eval(&ctx, &manifest, predictions.as_deref(), out.as_deref(), confusion.as_deref(), &model)
        }
        Command::Aggregate { manifest, predictions, out } => commands::aggregate(&ctx, &manifest, &predictions, &out),
        Command::Phantom { out, spec } => commands::phantom(&ctx, &out, spec.as_deref()),
    }
}
