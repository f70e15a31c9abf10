use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "oarseg", version, about = "Organ-at-risk segmentation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

/// Flags shared by the config-driven verbs.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (.json or .toml).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in starting config when no `--config` is given.
    #[arg(long, value_enum, default_value = "enhanced")]
    pub preset: Preset,
    /// Dot-path override applied after loading, e.g. `loss.ce_weight=0.6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replaces the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; for runs, the run root (else $OARSEG_RUNS_DIR, else `runs`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Enhanced,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for oarseg_core::engine::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Val => Self::Val,
            SplitArg::Test => Self::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum AblationKind {
    LossWeights,
    Scheduler,
    Encoder,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Validate a dataset directory and write its split manifest and summary.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// First generate this many synthetic phantoms under the dataset root.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
    },
    /// Train one experiment, then report on the validation and test splits.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<run root>/<run_name>/best.ckpt`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Run one of the ablation sweeps, one full training run per arm.
    Ablate {
        #[arg(value_enum)]
        kind: AblationKind,
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of arm keys (e.g. `exp_range,constant` or `0.4:0.6`).
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<String>>,
    },
    /// Side-by-side Baseline/Enhanced table from two run directories.
    Compare {
        #[arg(long, value_name = "RUN_DIR")]
        baseline: PathBuf,
        #[arg(long, value_name = "RUN_DIR")]
        enhanced: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Model name for the table corner.
        #[arg(long, default_value = "3D ResU-Net")]
        title: String,
        /// Directory for comparison_<split>.{csv,json,txt}; defaults to the current directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// DICE and loss curves for one or more runs, plus each run's learning-rate trace.
    Plot {
        #[arg(value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
        #[arg(long, value_name = "DIR", default_value = "plots")]
        out: PathBuf,
    },
}
