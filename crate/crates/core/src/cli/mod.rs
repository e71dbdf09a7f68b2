//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numeric failure,
//! 4 verification failure.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, CONFIG_SCHEMA_VERSION};

use crate::data::{generate_synthetic, load_dataset, load_labels, save_dataset, save_labels, MultiViewDataset, SynthSpec};
use crate::error::Error;
use crate::metrics::{MetricOptions, Metrics, NmiNorm};
use crate::model::{load_model, save_model, ModelMeta, ModelParams, TrainingState, SCHEMA_VERSION};
use crate::spectral::{build_affinity, spectral_cluster};
use crate::training::{evaluate, grad_check_loss, select_best_view, toy_problem, train_with, TrainError, TrainReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Maximum relative error accepted by `grad-check`.
pub const GRAD_CHECK_THRESHOLD: f64 = 1e-4;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)");

#[derive(Debug, Parser)]
#[command(name = "msalaa", version = VERSION, about = "Multi-view subspace clustering with attention and autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic union-of-subspaces dataset.
    Synth(SynthArgs),
    /// Train a model and write its directory plus history.csv.
    Train(TrainArgs),
    /// Cluster a dataset with a trained model.
    Cluster(ClusterArgs),
    /// Score predicted labels against true labels.
    Evaluate(EvaluateArgs),
    /// Check loss gradients against finite differences.
    GradCheck(GradCheckArgs),
    /// Write per-view embeddings, attention weights and affinities.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON synthetic spec; built-in default when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Model directory to write.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip per-feature z-scoring regardless of the config.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Number of clusters; defaults to the manifest's class count.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Label file to write, one integer per line.
    #[arg(long)]
    out: PathBuf,
    /// View whose C builds the affinity; best view when omitted.
    #[arg(long)]
    view: Option<usize>,
    #[arg(long)]
    export_affinity: Option<PathBuf>,
    /// Directory receiving H_<v>.csv for every view (rows = samples).
    #[arg(long)]
    export_embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Directory receiving metrics.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Pair-counting precision/recall instead of mapped labels.
    #[arg(long)]
    pairwise: bool,
    /// Normalize NMI by the arithmetic mean of entropies.
    #[arg(long)]
    nmi_arithmetic: bool,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// A failed command: exit code plus message.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::Io { .. } | Error::Format { .. } => EXIT_USAGE,
            Error::Convergence { .. } | Error::NonFinite(_) | Error::Invariant(_) => EXIT_NUMERIC,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        msg: msg.into(),
    }
}

type CmdResult = std::result::Result<(), Failure>;

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.msg);
        return f.code;
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

/// Applies `MSALAA_THREADS` (0 or unset = automatic).
fn configure_threads() -> CmdResult {
    let Ok(raw) = std::env::var("MSALAA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("MSALAA_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        // A pool may already exist when running in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| Error::Format {
                path: path.clone(),
                msg: e.to_string(),
            })?
        }
        None => SynthSpec::default(),
    };
    let ds = generate_synthetic(&spec, a.seed)?;
    let manifest = save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} views, {} samples, {} clusters to {}",
        ds.num_views(),
        ds.num_samples(),
        ds.num_classes,
        manifest.display()
    );
    Ok(())
}

/// What `cluster` and `export` need to reproduce training-time inputs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct RunRecord {
    config: RunConfig,
    standardize: bool,
}

fn prepared_data(manifest: &Path, standardize: bool) -> Result<MultiViewDataset, Failure> {
    let mut ds = load_dataset(manifest)?;
    if standardize {
        ds.standardize();
    }
    Ok(ds)
}

fn write_history(dir: &Path, report: &TrainReport) -> CmdResult {
    let path = dir.join("history.csv");
    fs::write(&path, report.history_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn meta_for(params: &ModelParams, seed: u64, record: &RunRecord, training: TrainingState) -> ModelMeta {
    ModelMeta {
        schema_version: SCHEMA_VERSION,
        config: params.config().clone(),
        num_samples: params.num_samples(),
        seed,
        training,
        run: serde_json::to_value(record).expect("run record serializes"),
    }
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = RunConfig::load(&a.config)?;
    let standardize = cfg.standardize && !a.no_standardize;
    let ds = prepared_data(&a.data, standardize)?;
    let dims = ds.feature_dims();
    if let Some(expected) = &cfg.feature_dims {
        if *expected != dims {
            return Err(usage(format!("config feature_dims {expected:?} do not match data {dims:?}")));
        }
    }
    if let Some(v) = cfg.best_view {
        if v >= dims.len() {
            return Err(usage(format!("best_view {v} out of range for {} views", dims.len())));
        }
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    let model_cfg = cfg.model_config(&dims);
    let options = cfg.train_options(seed);
    let record = RunRecord {
        config: cfg.clone(),
        standardize,
    };
    let out = a.out.clone();
    let result = train_with(&ds.views, &model_cfg, &cfg.loss_weights(), &options, |cp| {
        let state = TrainingState {
            epochs_run: cp.epoch,
            adam_timestep: cp.adam_timestep,
            last_lr: cp.history.last().map_or(0.0, |r| r.lr),
            final_loss_total: None,
            stopped_early: false,
            finished: false,
        };
        save_model(&out, cp.params, &meta_for(cp.params, seed, &record, state))
    });
    match result {
        Ok((params, report)) => {
            let state = TrainingState {
                epochs_run: report.epochs_run,
                adam_timestep: report.adam_timestep,
                last_lr: report.history.last().map_or(0.0, |r| r.lr),
                final_loss_total: Some(report.final_loss.total),
                stopped_early: report.stopped_early,
                finished: true,
            };
            save_model(&a.out, &params, &meta_for(&params, seed, &record, state))?;
            write_history(&a.out, &report)?;
            let f = report.final_loss;
            println!(
                "epochs={} stopped_early={} initial_loss={:.6} final_loss={:.6} recon={:.6} selfrep={:.6} align={:.6}",
                report.epochs_run,
                report.stopped_early,
                report.initial_loss().unwrap_or(f64::NAN),
                f.total,
                f.recon,
                f.selfrep,
                f.align
            );
            Ok(())
        }
        Err(TrainError::Diverged {
            epoch,
            term,
            last_good,
            report,
        }) => {
            let state = TrainingState {
                epochs_run: report.epochs_run,
                adam_timestep: report.adam_timestep,
                last_lr: report.history.last().map_or(0.0, |r| r.lr),
                final_loss_total: None,
                stopped_early: false,
                finished: false,
            };
            save_model(&a.out, &last_good, &meta_for(&last_good, seed, &record, state))?;
            write_history(&a.out, &report)?;
            Err(Failure {
                code: EXIT_NUMERIC,
                msg: format!(
                    "training diverged at epoch {epoch}: non-finite {term} loss; last finite parameters kept in {}",
                    a.out.display()
                ),
            })
        }
        Err(TrainError::Invalid(e)) => Err(e.into()),
    }
}

/// Loads a model and the dataset it applies to, checking that they agree.
fn model_and_data(model: &Path, data: &Path) -> Result<(ModelParams, RunRecord, MultiViewDataset), Failure> {
    let (params, meta) = load_model(model)?;
    let record: RunRecord = serde_json::from_value(meta.run.clone()).map_err(|e| Error::Format {
        path: model.join(crate::model::META_FILE),
        msg: format!("run record: {e}"),
    })?;
    let ds = prepared_data(data, record.standardize)?;
    if ds.feature_dims() != params.config().feature_dims {
        return Err(usage(format!(
            "data feature dims {:?} do not match model {:?}",
            ds.feature_dims(),
            params.config().feature_dims
        )));
    }
    if ds.num_samples() != params.num_samples() {
        return Err(usage(format!(
            "data has {} samples, model was trained on {}",
            ds.num_samples(),
            params.num_samples()
        )));
    }
    Ok((params, record, ds))
}

fn cmd_cluster(a: ClusterArgs) -> CmdResult {
    let (params, record, ds) = model_and_data(&a.model, &a.data)?;
    let m = ds.num_views();
    let k = a.k.unwrap_or(ds.num_classes);
    if k == 0 || k > ds.num_samples() {
        return Err(usage(format!("--k must be in 1..={}, got {k}", ds.num_samples())));
    }
    let (_, state) = evaluate(&ds.views, &params, &record.config.loss_weights())?;
    let view = match a.view.or(record.config.best_view) {
        Some(v) if v >= m => return Err(usage(format!("--view {v} out of range for {m} views"))),
        Some(v) => v,
        None => select_best_view(&state),
    };
    let affinity = build_affinity(params.self_rep(view))?;
    let assignment = spectral_cluster(&affinity, k, a.seed)?;
    save_labels(&a.out, &assignment.labels)?;
    if let Some(path) = &a.export_affinity {
        affinity.as_matrix().save_csv(path)?;
    }
    if let Some(dir) = &a.export_embeddings {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (v, s) in state.views.iter().enumerate() {
            s.h.transpose().save_csv(&dir.join(format!("H_{v}.csv")))?;
        }
    }
    println!("view={view} k={k} inertia={:.6e} labels={}", assignment.inertia, a.out.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let pred = load_labels(&a.pred)?;
    let truth = load_labels(&a.truth)?;
    if pred.len() != truth.len() {
        return Err(usage(format!(
            "{} has {} labels but {} has {}",
            a.pred.display(),
            pred.len(),
            a.truth.display(),
            truth.len()
        )));
    }
    let opts = MetricOptions {
        nmi_norm: if a.nmi_arithmetic { NmiNorm::Arithmetic } else { NmiNorm::Geometric },
        pairwise: a.pairwise,
    };
    let metrics = Metrics::compute(&pred, &truth, &opts)?;
    for (name, value) in metrics.entries() {
        println!("{name}={value:.4}");
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join("metrics.json");
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn cmd_grad_check(a: GradCheckArgs) -> CmdResult {
    let cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig {
            common_dim: 4,
            feature_dims: Some(vec![5, 6, 7]),
            ..RunConfig::with_common_dim(4)
        },
    };
    let dims = cfg.feature_dims.clone().unwrap_or_else(|| vec![5, 6, 7]);
    if a.samples < 2 {
        return Err(usage("--samples must be >= 2"));
    }
    if !(a.step > 0.0 && a.step.is_finite()) {
        return Err(usage("--step must be positive"));
    }
    let model_cfg = cfg.model_config(&dims);
    let (views, params) = toy_problem(&model_cfg, a.samples, a.seed)?;
    let report = grad_check_loss(&views, &params, &cfg.loss_weights(), a.step, a.corrupt_gradient)?;
    let worst = report
        .worst
        .as_ref()
        .map(|(id, i, j)| format!("{id}[{i},{j}]"))
        .unwrap_or_else(|| "none".into());
    println!(
        "max_rel_error={:.3e} entries={} worst={worst}",
        report.max_rel_error, report.entries_checked
    );
    if report.max_rel_error < GRAD_CHECK_THRESHOLD {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            msg: format!(
                "gradient check failed: relative error {:.3e} >= {GRAD_CHECK_THRESHOLD:e} at {worst} (analytic {:e}, numeric {:e})",
                report.max_rel_error, report.analytic, report.numeric
            ),
        })
    }
}

fn cmd_export(a: ExportArgs) -> CmdResult {
    let (params, record, ds) = model_and_data(&a.model, &a.data)?;
    let (_, state) = evaluate(&ds.views, &params, &record.config.loss_weights())?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (v, s) in state.views.iter().enumerate() {
        s.h.transpose().save_csv(&a.out.join(format!("H_{v}.csv")))?;
        s.weights.transpose().save_csv(&a.out.join(format!("a_{v}.csv")))?;
        build_affinity(params.self_rep(v))?
            .as_matrix()
            .save_csv(&a.out.join(format!("A_{v}.csv")))?;
    }
    println!("best_view={} exported {} views to {}", select_best_view(&state), ds.num_views(), a.out.display());
    Ok(())
}
