//! Command-line flags, the JSON config file, and the merged run config.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use stcl::pipeline::prediction::SamplingConfig;
use stcl::training::TrainConfig;
use stcl::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "stcl", version, about = "Spatio-temporal ConvLSTM for 4D image sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset directory (ground truth for `eval`).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Cross-validation fold: held out by `train`, evaluated by `predict` and `eval`.
    #[arg(long, global = true)]
    pub fold: Option<usize>,
    /// Substitute interval (days) from time 2 to the predicted time point.
    #[arg(long, global = true)]
    pub interval_days: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Directory of `predict` outputs, for `eval`.
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData,
    /// Train a model and write checkpoints.
    Train,
    /// Predict time 3 (or a later time) for test patients.
    Predict,
    /// Segment every frame of test sequences.
    Segment,
    /// Score saved predictions against a dataset.
    Eval,
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Segment => "segment",
            Command::Eval => "eval",
            Command::Gradcheck => "gradcheck",
        }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Predict,
    Segment,
}

/// Config file contents. Every key is optional.
#[derive(Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub mode: Option<ModeArg>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fold: Option<usize>,
    pub interval_days: Option<f64>,
    pub predictions: Option<PathBuf>,
    pub patients: Option<usize>,
    pub folds: Option<usize>,
    pub sequences: Option<usize>,
    pub train_sequences: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub slices: Option<usize>,
    pub learning_rate: Option<f64>,
    pub items_per_patient: Option<usize>,
    pub max_shift: Option<i32>,
    pub later_targets: Option<bool>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_PATIENTS: usize = 33;
pub const DEFAULT_FOLDS: usize = 3;
pub const DEFAULT_SEQUENCES: usize = 15;
pub const DEFAULT_TRAIN_SEQUENCES: usize = 12;

/// Effective configuration of one run, echoed into its outputs.
#[derive(Serialize, Debug, Clone)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub mode: ModeArg,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fold: Option<usize>,
    pub interval_days: Option<f64>,
    pub predictions: Option<PathBuf>,
    pub patients: usize,
    pub folds: usize,
    pub sequences: usize,
    pub train_sequences: usize,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
}

impl RunConfig {
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => FileConfig::read(p)?,
            None => FileConfig::default(),
        };
        let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let mode = match cli.command {
            Command::Predict => ModeArg::Predict,
            Command::Segment => ModeArg::Segment,
            _ => cli.mode.or(file.mode).unwrap_or(ModeArg::Predict),
        };
        if let Some(m) = cli.mode {
            if m != mode {
                return Err(Error::Config(format!("`{}` cannot run with --mode {m:?}", cli.command.name())));
            }
        }
        let mut train = match mode {
            ModeArg::Predict => TrainConfig::prediction(seed),
            ModeArg::Segment => TrainConfig::segmentation(seed),
        };
        train.epochs = file.epochs.unwrap_or(train.epochs);
        train.batch_size = file.batch_size.unwrap_or(train.batch_size);
        train.slices = file.slices.unwrap_or(train.slices);
        train.adam.lr = file.learning_rate.unwrap_or(train.adam.lr);
        train.validate()?;
        let mut sampling = SamplingConfig::default();
        if file.items_per_patient.is_some() {
            sampling.items_per_patient = file.items_per_patient;
        }
        sampling.max_shift = file.max_shift.unwrap_or(sampling.max_shift);
        sampling.later_targets = file.later_targets.unwrap_or(sampling.later_targets);
        let interval_days = cli.interval_days.or(file.interval_days);
        if let Some(d) = interval_days {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Config(format!("--interval-days must be positive, got {d}")));
            }
        }
        let cfg = Self {
            command: cli.command.name().into(),
            seed,
            mode,
            dataset: cli.dataset.clone().or(file.dataset),
            checkpoint: cli.checkpoint.clone().or(file.checkpoint),
            out: cli.out.clone().or(file.out),
            fold: cli.fold.or(file.fold),
            interval_days,
            predictions: cli.predictions.clone().or(file.predictions),
            patients: file.patients.unwrap_or(DEFAULT_PATIENTS),
            folds: file.folds.unwrap_or(DEFAULT_FOLDS),
            sequences: file.sequences.unwrap_or(DEFAULT_SEQUENCES),
            train_sequences: file.train_sequences.unwrap_or(DEFAULT_TRAIN_SEQUENCES),
            train,
            sampling,
        };
        Ok(cfg)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{}` needs --{flag}", self.command)))
    }

    /// Writes this config as `run.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run.json");
        let text = stcl::format::to_sorted_json(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
