//! `l0sparse` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or file
//! format error, 4 numerical abort during training.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "l0sparse",
    version,
    about = "Sparse L0-regularized pendulum models"
)]
struct Cli {
    /// Worker threads for data generation, evaluation and sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect random-policy pendulum transitions.
    GenData(GenDataArgs),
    /// Train a transition or reward model.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Print the closed-form equations of an l0-sindy checkpoint.
    Extract(ExtractArgs),
    /// Combine metrics files into one comparison table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the transitions as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelArg {
    Fcnn,
    SparseFcnn,
    L0Sindy,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TargetArg {
    Transition,
    Reward,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum LibraryArg {
    Polynomial,
    Fourier,
    Polyfourier,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_enum, default_value_t = TargetArg::Transition)]
    target: TargetArg,
    #[arg(long, value_enum, default_value_t = LibraryArg::Polynomial)]
    library: LibraryArg,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = 1)]
    frequencies: usize,
    /// Penalty weight; a comma-separated list runs a parallel sweep.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    h_dim: usize,
    /// Gate samples averaged per iteration.
    #[arg(long, default_value_t = 1)]
    mc_samples: usize,
    #[arg(long)]
    iterations_per_epoch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fill the `seconds` column of the metrics CSV.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Print every coefficient at full precision.
    #[arg(long)]
    exact: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    metrics: Vec<PathBuf>,
    /// Emit JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version exit 0, everything else 2
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = commands::set_jobs(jobs) {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Extract(a) => commands::extract(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
