//! Command-line front end: one subcommand per pipeline stage plus
//! `pipeline`, which chains them from a [`RunConfig`] file.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 usage error, 3 a
//! header, dimension or validation error. Failures print one JSON line on
//! stderr: `{"error":{"stage":..,"kind":..,"code":..,"message":..}}`.

mod config;
mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::classifier::TrainConfig;
use crate::error::Error;
use crate::features::Mode;
use crate::pursuit::PursuitConfig;
use crate::signal_io::{LengthFit, SynthSpec};

pub use config::{GroupKey, RunConfig, SynthConfig};
pub use stages::{
    build_dict, decompose, evaluate_file, featurize_codes, pipeline, predict_file, recording_of, synth, train_model,
    DecomposeOptions, EvalOptions, EvalReport, PipelineOutput, StageError,
};

use stages::at;

/// Environment variable capping the worker pool; 0 or unset means one
/// worker per core.
pub const THREADS_ENV: &str = "GABORCOMP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gaborcomp", version, about = "Gabor sparse coding and murmur classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the multiresolution dictionary and write it as .mrgd.
    BuildDict {
        #[arg(long, default_value_t = 512)]
        m: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic dataset: CSV segments plus manifest.csv.
    Synth(SynthArgs),
    /// Decompose manifest segments into .mrgc code files.
    Decompose {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 512)]
        m: usize,
        #[arg(long, value_enum, default_value = "resample")]
        fit: FitArg,
        #[arg(long, default_value_t = 511)]
        zeta: usize,
        #[arg(long, default_value_t = 0.0)]
        residual_tol: f64,
        /// Decompose segments sharing this attribute jointly.
        #[arg(long, value_enum)]
        joint_by: Option<GroupKey>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a directory of codes into a .mrgf feature bundle.
    Featurize {
        #[arg(long)]
        codes: PathBuf,
        /// mag or sq
        #[arg(long, default_value = "sq")]
        mode: Mode,
        /// Scale every stack so its largest entry is 1.
        #[arg(long)]
        max_normalize: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write every matrix as CSV into this directory.
        #[arg(long)]
        dump_csv: Option<PathBuf>,
    },
    /// Train a classifier on a feature bundle.
    Train {
        #[arg(long)]
        feats: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        val_split: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch curves as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Class probabilities for every stack of a bundle.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified k-fold evaluation, written as report.json.
    Eval {
        #[arg(long)]
        feats: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum)]
        group_by: Option<GroupKey>,
        /// One stratified hold-out split of this fraction instead of k folds.
        #[arg(long, conflicts_with = "group_by")]
        holdout: Option<f64>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from one config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` of the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FitArg {
    Resample,
    ZeroPad,
}

impl From<FitArg> for LengthFit {
    fn from(f: FitArg) -> Self {
        match f {
            FitArg::Resample => LengthFit::Resample,
            FitArg::ZeroPad => LengthFit::ZeroPad,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON file holding one SynthSpec or a list of them. Overrides the
    /// flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Omit for noiseless segments.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 512)]
    m: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    dhead: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 150)]
    batch: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl ModelArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            warmup_epochs: self.warmup,
            clip_norm: self.clip_norm,
        }
    }
}

fn load_specs(path: &std::path::Path) -> Result<Vec<SynthSpec>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|s| vec![s])
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Caps the global worker pool from [`THREADS_ENV`]. Later calls in the same
/// process keep the first setting.
pub fn configure_threads() -> Result<(), Error> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a non-negative integer")))?,
        _ => 0,
    };
    // an already initialized pool is not an error
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn kind(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Io { .. } => ("io", 1),
        Error::Decode { .. } => ("decode", 1),
        Error::Numerical { .. } => ("numerical", 1),
        Error::InvalidSegment(_) => ("invalid_segment", 3),
        Error::InvalidLabel { .. } => ("invalid_label", 3),
        Error::InvalidSpec(_) => ("invalid_spec", 3),
        Error::InvalidAtomParams(_) => ("invalid_atom_params", 3),
        Error::InvalidResolution(_) => ("invalid_resolution", 3),
        Error::Dim(_) => ("dimension_mismatch", 3),
        Error::EmptyInput(_) => ("empty_input", 3),
        Error::DegenerateDataset(_) => ("degenerate_dataset", 3),
        Error::InvalidK(_) => ("invalid_k", 3),
        Error::Header(_) => ("header_mismatch", 3),
        Error::Config(_) => ("invalid_config", 3),
    }
}

/// The one-line JSON error report and the exit code for `err`.
pub fn error_line(err: &StageError) -> (String, i32) {
    let (kind, code) = kind(&err.error);
    let line = serde_json::json!({
        "error": {
            "stage": err.stage,
            "kind": kind,
            "code": code,
            "message": err.error.to_string(),
        }
    });
    (line.to_string(), code)
}

fn dispatch(command: Command) -> Result<(), StageError> {
    match command {
        Command::BuildDict { m, out } => build_dict(m, &out).map(drop).map_err(at("build-dict")),
        Command::Synth(args) => {
            let specs = match &args.spec {
                Some(path) => load_specs(path).map_err(at("synth"))?,
                None => SynthConfig {
                    per_class: args.per_class,
                    noise_snr_db: args.snr,
                    ..SynthConfig::default()
                }
                .specs(args.seed, args.m),
            };
            synth(&specs, &args.out).map(drop).map_err(at("synth"))
        }
        Command::Decompose {
            dict,
            manifest,
            m,
            fit,
            zeta,
            residual_tol,
            joint_by,
            out,
        } => {
            let opts = DecomposeOptions {
                m,
                fit: fit.into(),
                pursuit: PursuitConfig {
                    zeta,
                    residual_tol,
                    ..PursuitConfig::default()
                },
                joint_by,
            };
            decompose(&dict, &manifest, &opts, &out).map(drop).map_err(at("decompose"))
        }
        Command::Featurize {
            codes,
            mode,
            max_normalize,
            out,
            dump_csv,
        } => featurize_codes(&codes, mode, max_normalize, &out, dump_csv.as_deref())
            .map(drop)
            .map_err(at("featurize")),
        Command::Train {
            feats,
            model,
            val_split,
            out,
            log,
        } => train_model(
            &feats,
            &model.train_config(),
            model.heads,
            model.dhead,
            val_split,
            &out,
            log.as_deref(),
        )
        .map(drop)
        .map_err(at("train")),
        Command::Predict { model, feats, out } => predict_file(&model, &feats, &out).map_err(at("predict")),
        Command::Eval {
            feats,
            k,
            group_by,
            holdout,
            model,
            out,
        } => {
            let opts = EvalOptions {
                k,
                seed: model.seed,
                group_by,
                holdout,
                heads: model.heads,
                d_head: model.dhead,
                train: model.train_config(),
            };
            evaluate_file(&feats, &opts, &out).map(drop).map_err(at("eval"))
        }
        Command::Pipeline { config, out_dir } => {
            let mut cfg = RunConfig::load(&config).map_err(at("pipeline"))?;
            if let Some(dir) = out_dir {
                cfg.out_dir = dir;
            }
            pipeline(&cfg).map(drop)
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Usage text and errors go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = configure_threads()
        .map_err(at("startup"))
        .and_then(|()| dispatch(cli.command));
    match result {
        Ok(()) => 0,
        Err(err) => {
            let (line, code) = error_line(&err);
            eprintln!("{line}");
            code
        }
    }
}
