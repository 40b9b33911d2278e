//! Command-line front end: phantom generation, parametric imaging, feature
//! extraction, and model training.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nakascan_core::classifier::{write_roc_csv, write_threshold_csv, ThresholdPolicy};
use nakascan_core::imaging::{generate_maps, plan_windows, ImageFormat, WindowPlan};
use nakascan_core::io::{
    append_feature_row, export_image, format_real, load_annotations, read_feature_table, read_json, save_model,
    write_feature_table, write_file, write_json,
};
use nakascan_core::model::{AnnotationSet, FeatureTable};
use nakascan_core::phantom::{generate_cohort, read_manifest, CohortSpec};
use nakascan_core::pipeline::{
    check_regions, cohort_features, extract_features, load_envelope_input, map_path, read_maps_dir, train_and_evaluate,
    TrainConfig, TrainOutcome,
};
use nakascan_core::{Error, Result};

#[derive(Parser)]
#[command(name = "nakascan", version, about = "Nakagami parametric imaging and lesion classification")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled cohort.
    Phantom {
        /// Cohort spec (JSON); defaults to the built-in 104/26 cohort.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write RF frames instead of envelopes.
        #[arg(long)]
        rf: bool,
    },
    /// Compute the seven parametric maps of one envelope or RF frame.
    Images {
        /// `.env.raw` envelope or `.rfraw` RF container.
        #[arg(long)]
        input: PathBuf,
        /// Annotation to check against the map grid before writing.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Window side in mm; a comma list writes one subdirectory per size.
        #[arg(long, value_delimiter = ',', default_value = "0.75")]
        window: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write 8-bit PGM previews.
        #[arg(long)]
        pgm: bool,
    },
    /// Extract one 72-feature row from a maps directory and append it to a CSV.
    Features {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select features, cross-validate, tune the threshold and fit the model.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Full pipeline over a phantom cohort directory, one result set per window.
    Run {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.75")]
        window: Vec<f64>,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    ZeroFn,
    MaxAcc,
    Sweep,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 1.0)]
    pub svm_c: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "zero-fn")]
    pub threshold_policy: PolicyArg,
    /// Use all features, skipping recursive elimination.
    #[arg(long)]
    pub no_select: bool,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            folds: self.folds,
            svm_c: self.svm_c,
            seed: self.seed,
            threshold_policy: match self.threshold_policy {
                PolicyArg::ZeroFn => ThresholdPolicy::ZeroFnMaxAccuracy,
                PolicyArg::MaxAcc => ThresholdPolicy::MaxAccuracy,
                PolicyArg::Sweep => ThresholdPolicy::FullSweep,
            },
            select: !self.no_select,
        }
    }
}

/// Exit status for a failed command: 3 for missing or unreadable files, 2 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        3
    } else {
        2
    }
}

/// Parses `args` (program name first), runs the command and reports errors
/// on stderr. `--jobs` runs the command on a dedicated pool of that size.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.jobs {
        None => run(cli.command),
        Some(0) => Err(Error::invalid("--jobs must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(Error::invalid(format!("thread pool: {e}"))),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom { spec, out, seed, rf } => cmd_phantom(spec.as_deref(), &out, seed, rf),
        Command::Images {
            input,
            annotations,
            window,
            out,
            pgm,
        } => cmd_images(&input, annotations.as_deref(), &window, &out, pgm),
        Command::Features { maps, annotations, out } => cmd_features(&maps, &annotations, &out),
        Command::Train { features, out, train } => cmd_train(&features, &out, &train.config()),
        Command::Run {
            cohort,
            out,
            window,
            train,
        } => cmd_run(&cohort, &out, &window, &train.config()),
    }
}

fn cmd_phantom(spec_path: Option<&Path>, out: &Path, seed: Option<u64>, rf: bool) -> Result<()> {
    let mut spec: CohortSpec = match spec_path {
        Some(p) => read_json(p)?,
        None => CohortSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.rf_mode |= rf;
    let manifest = generate_cohort(&spec, out)?;
    log::info!("wrote {} masses to {}", manifest.masses.len(), out.display());
    Ok(())
}

fn window_dir(out: &Path, window_mm: f64, many: bool) -> PathBuf {
    if many {
        out.join(format!("window_{window_mm}mm"))
    } else {
        out.to_path_buf()
    }
}

fn cmd_images(input: &Path, ann: Option<&Path>, windows: &[f64], out: &Path, pgm: bool) -> Result<()> {
    let env = load_envelope_input(input)?;
    let ann = ann.map(load_annotations).transpose()?;
    let plans = windows
        .iter()
        .map(|&w| plan_windows(&env, w))
        .collect::<Result<Vec<WindowPlan>>>()?;
    let mut outputs = Vec::with_capacity(plans.len());
    for plan in &plans {
        let maps = generate_maps(&env, plan)?;
        if let Some(a) = &ann {
            check_regions(&maps, a)?;
        }
        outputs.push(maps);
    }
    for (plan, maps) in plans.iter().zip(&outputs) {
        let dir = window_dir(out, plan.window_mm, windows.len() > 1);
        for img in &maps.images {
            export_image(img, &map_path(&dir, img.kind()), ImageFormat::RawF32)?;
            if pgm {
                export_image(img, &dir.join(format!("{}.pgm", img.kind().tag())), ImageFormat::Pgm8)?;
            }
        }
        write_json(&dir.join("qc.json"), &maps.qc)?;
        if maps.qc.failed_pixels > 0 {
            log::warn!(
                "window {} mm: {} of {} pixels had no usable estimate",
                plan.window_mm,
                maps.qc.failed_pixels,
                maps.qc.total_pixels
            );
        }
    }
    Ok(())
}

fn cmd_features(maps_dir: &Path, ann_path: &Path, out: &Path) -> Result<()> {
    let maps = read_maps_dir(maps_dir)?;
    let ann: AnnotationSet = load_annotations(ann_path)?;
    let row = extract_features(&maps, &ann)?;
    append_feature_row(&row, out)
}

fn write_outcome(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    save_model(&outcome.model, &dir.join("model.json"))?;
    if let Some(sel) = &outcome.selection {
        write_json(&dir.join("selection.json"), sel)?;
    }
    write_roc_csv(&outcome.roc, &dir.join("roc.csv"))?;
    write_threshold_csv(&outcome.thresholds, &dir.join("thresholds.csv"))?;
    write_json(&dir.join("report.json"), &outcome.report)
}

fn cmd_train(features: &Path, out: &Path, config: &TrainConfig) -> Result<()> {
    let table = read_feature_table(features)?;
    let outcome = train_and_evaluate(&table.to_dataset(), config)?;
    write_outcome(out, &outcome)
}

fn cmd_run(cohort: &Path, out: &Path, windows: &[f64], config: &TrainConfig) -> Result<()> {
    let manifest = read_manifest(cohort)?;
    let mut results: Vec<(f64, FeatureTable, TrainOutcome)> = Vec::with_capacity(windows.len());
    for &w in windows {
        let start = Instant::now();
        let (table, qc) = cohort_features(cohort, &manifest, w)?;
        let failed: usize = qc.iter().map(|q| q.failed_pixels).sum();
        if failed > 0 {
            log::warn!("window {w} mm: {failed} map pixels without a usable estimate");
        }
        let outcome = train_and_evaluate(&table.to_dataset(), config)?;
        log::info!(
            "window {w} mm: AUC {:.4}, {} features, {:.1} s",
            outcome.report.auc,
            outcome.report.selected_features.len(),
            start.elapsed().as_secs_f64()
        );
        results.push((w, table, outcome));
    }
    let mut sweep = String::from("window_mm,auc,accuracy,n_selected,threshold,sensitivity,specificity,operating_accuracy\n");
    for (w, table, outcome) in &results {
        let dir = window_dir(out, *w, true);
        write_feature_table(table, &dir.join("features.csv"))?;
        write_outcome(&dir, outcome)?;
        let r = &outcome.report;
        let op = &r.operating_point;
        writeln!(
            sweep,
            "{},{},{},{},{},{},{},{}",
            format_real(*w),
            format_real(r.auc),
            format_real(r.accuracy_at_zero),
            r.selected_features.len(),
            format_real(op.threshold),
            format_real(op.sensitivity),
            format_real(op.specificity),
            format_real(op.accuracy)
        )
        .expect("string write");
    }
    write_file(&out.join("sweep.csv"), sweep.as_bytes())?;
    Ok(())
}
