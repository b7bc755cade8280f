use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "tsm", version, about = "Classic, learned and temporal stencil solvers")]
pub struct Cli {
    /// Single-threaded, wall-clock-free outputs that reproduce bitwise.
    #[arg(long, global = true)]
    pub strict_deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a reference dataset (fine DNS, downsampled).
    Datagen(DatagenArgs),
    /// Train a learned solver on a dataset.
    Train(TrainArgs),
    /// Roll a classic or learned solver from a trajectory's initial window.
    Simulate(SimulateArgs),
    /// Correlate a prediction with a reference trajectory.
    Evaluate(EvaluateArgs),
    /// Time-averaged kinetic energy spectrum of a 2-D trajectory.
    Spectrum(SpectrumArgs),
    /// Evaluate DNS and learned models on a dataset's eval split.
    Compare(CompareArgs),
}

// Every option is optional so that unset flags fall through to the config
// file and then to the defaults.

#[derive(Debug, Args, Serialize)]
pub struct DatagenArgs {
    /// JSON file with any of the options below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// ns or ks.
    #[arg(long)]
    pub equation: Option<String>,
    /// kolmogorov-re1000, decaying-re1000, kolmogorov-re4000, kolmogorov-2x.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub fine: Option<usize>,
    #[arg(long)]
    pub coarse: Option<usize>,
    /// Training trajectories.
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub eval_trajectories: Option<usize>,
    /// Recorded time units per trajectory.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Classic scheme of the fine 2-D solver.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// li, tsm-raw, tsm-hippo or lc.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub unroll: Option<usize>,
    #[arg(long)]
    pub bundle: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hippo_order: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Steps of linear learning-rate ramp-up.
    #[arg(long)]
    pub lr_warmup: Option<usize>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Classic scheme of the LC base step.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trajectory supplying the initial window and the solver setup.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Learned model; without it the classic scheme runs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Option<String>,
    /// Frame holding the initial state (default: last frame of the window).
    #[arg(long)]
    pub start: Option<usize>,
    /// Steps to simulate (default: to the end of the trajectory).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Reference frame aligned with the first predicted frame.
    #[arg(long)]
    pub offset: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Start of the averaging window (trajectory time).
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    /// Output CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Learned model as LABEL=CHECKPOINT; repeatable.
    #[arg(long = "model", value_name = "LABEL=PATH")]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<String>,
    /// Classic scheme of the coarse DNS row.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Use at most this many eval trajectories.
    #[arg(long)]
    pub max_trajectories: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
