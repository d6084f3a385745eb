//! `stmmmf`: ingest rating data, split it, run MMMF self-training, evaluate
//! checkpoints, sweep hyperparameters and retrain a baseline on the
//! augmented rounds.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stmmmf::baseline::BaselineConfig;
use stmmmf::SelfTrainConfig;

#[derive(Parser, Debug)]
#[command(name = "stmmmf", version, about = "MMMF self-training with confidence-based augmentation and refinement")]
struct Cli {
    /// Directory for outputs that are not given an explicit path.
    #[arg(long, global = true, env = "STMMMF_OUT", default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a ratings file, drop sparse users and write an STMAT matrix.
    Ingest(IngestArgs),
    /// Seeded random train/test split of an STMAT matrix.
    Split(SplitArgs),
    /// Run the self-training loop.
    Selftrain(SelftrainArgs),
    /// Score a checkpoint on a matrix.
    Evaluate(EvaluateArgs),
    /// Sweep λ, τ₁ and the sampling percentage on a validation split.
    Gridsearch(GridArgs),
    /// Retrain the biased-MF baseline on every saved round.
    BaselineRounds(BaselineArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Flavor {
    /// Tab-separated `user item rating timestamp` (MovieLens 100K `u.data`).
    Ml100k,
    /// `user::item::rating::timestamp` (MovieLens 1M `ratings.dat`).
    Ml1m,
    /// A matrix previously written by this tool.
    Stmat,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, value_enum)]
    flavor: Flavor,
    input: PathBuf,
    /// Defaults to `<out-dir>/ratings.stmat`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Users with fewer ratings are removed.
    #[arg(long, default_value_t = 20)]
    min_ratings: usize,
}

#[derive(Args, Debug)]
struct SplitArgs {
    input: PathBuf,
    /// Share of observed ratings kept for training, in (0, 1).
    #[arg(long, default_value_t = 0.8)]
    frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Loop and inner-solver settings. τ values and the sampling rate are in
/// percent.
#[derive(Args, Debug, Clone)]
struct LoopArgs {
    #[arg(long, default_value_t = SelfTrainConfig::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = SelfTrainConfig::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = SelfTrainConfig::default().learning_rate)]
    lr: f64,
    /// Gradient steps per training solve.
    #[arg(long, default_value_t = SelfTrainConfig::default().max_steps)]
    gd_iters: usize,
    #[arg(long, default_value_t = SelfTrainConfig::default().tol)]
    tol: f64,
    /// Interior shift of the augmentation band, percent of the threshold gap.
    #[arg(long, default_value_t = 49.99)]
    tau1: f64,
    /// Half-width of the refinement band, percent of the threshold gap.
    #[arg(long, default_value_t = 10.0)]
    tau2: f64,
    #[arg(long, default_value_t = SelfTrainConfig::default().sample_pct)]
    sample_pct: f64,
    #[arg(long, default_value_t = SelfTrainConfig::default().cap)]
    cap: usize,
    #[arg(long, default_value_t = SelfTrainConfig::default().max_iters)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop after this many consecutive rises in test MAE; 0 disables.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Sequential reductions. Parallel runs already reproduce the sequential
    /// results bit for bit, so this only trades speed for a single thread.
    #[arg(long)]
    deterministic: bool,
}

impl LoopArgs {
    fn config(&self) -> SelfTrainConfig {
        SelfTrainConfig {
            dim: self.dim,
            lambda: self.lambda,
            learning_rate: self.lr,
            max_steps: self.gd_iters,
            tol: self.tol,
            seed: self.seed,
            tau1: self.tau1 / 100.0,
            tau2: self.tau2 / 100.0,
            sample_pct: self.sample_pct,
            cap: self.cap,
            max_iters: self.iters,
            patience: (self.patience > 0).then_some(self.patience),
            parallel: !self.deterministic,
        }
    }
}

#[derive(Args, Debug)]
struct SelftrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Held-out matrix for per-iteration metrics and the patience rule.
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    loop_args: LoopArgs,
    /// Save the training matrix every this many iterations (round 0 is the
    /// input); 0 disables snapshots.
    #[arg(long, default_value_t = 1)]
    snapshot_every: usize,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Training matrix; users absent from it get the mid-scale rating.
    #[arg(long)]
    train: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    train: PathBuf,
    /// Comma-separated λ values; defaults to 10^(i/16), i = 1, 5, ..., 37.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Comma-separated τ₁ values in percent; defaults to 5, 10, ..., 45, 49.99.
    #[arg(long, value_delimiter = ',')]
    tau1_grid: Option<Vec<f64>>,
    /// Comma-separated sampling percentages; defaults to 10, 20, ..., 100.
    #[arg(long, value_delimiter = ',')]
    sample_grid: Option<Vec<f64>>,
    /// Seeds averaged per cell.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Defaults to `<out-dir>/grid.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    loop_args: LoopArgs,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// Directory of `round_NNN.stmat` files; defaults to `<out-dir>/snapshots`.
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = BaselineConfig::default().factors)]
    factors: usize,
    #[arg(long, default_value_t = BaselineConfig::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = BaselineConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = BaselineConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to `<out-dir>/baseline_rounds.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failures split by exit status: bad invocations exit 2 before touching
/// the filesystem, everything else exits 1.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out_dir.as_path();
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(a, out),
        Command::Split(a) => commands::split(a, out),
        Command::Selftrain(a) => commands::selftrain(a, out),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gridsearch(a) => commands::gridsearch(a, out),
        Command::BaselineRounds(a) => commands::baseline_rounds(a, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
