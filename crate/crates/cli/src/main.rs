use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod bench;
mod commands;
mod manifest;

/// Structure learning for pairwise random fields.
#[derive(Parser, Debug)]
#[command(name = "crfind", version, about)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a random network and draw a dataset from it by Gibbs sampling.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Cross-validated metrics of a trained model.
    Eval(EvalArgs),
    /// Train and evaluate several methods over a grid of settings.
    Bench(BenchArgs),
    /// Histograms of per-state signals and errors.
    Hist(HistArgs),
    /// Exact marginals and partition function of a small model.
    Oracle(OracleArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Mean number of neighbours per node.
    #[arg(long, default_value_t = 5.0)]
    degree: f64,
    /// Number of samples.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Gibbs sweeps before the first sample.
    #[arg(long, default_value_t = 10_000)]
    burnin: usize,
    /// Gibbs sweeps between samples.
    #[arg(long, default_value_t = 1_000)]
    thinning: usize,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    weight_lo: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    weight_hi: f64,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    nodes: usize,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    /// L1 penalty.
    #[arg(long, default_value_t = 2.0)]
    l1: f64,
    /// L2 penalty.
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
    /// Features added per induction step [default: 50].
    #[arg(long)]
    batch: Option<usize>,
    /// Error threshold for cfi [default: 0.2].
    #[arg(long)]
    t_err: Option<f64>,
    /// Signal threshold for cfi [default: 0.2].
    #[arg(long)]
    t_sig: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Train unary weights to convergence before inducing pairs.
    #[arg(long)]
    two_stage: bool,
    /// Include all value pairs as candidates instead of skipping value 0.
    #[arg(long)]
    all_values: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// full, grafting or cfi.
    #[arg(long, default_value = "cfi")]
    mode: String,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record per-phase wall times in the trace.
    #[arg(long)]
    trace_timings: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Fraction of label slots hidden per fold.
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Comma-separated network sizes to generate.
    #[arg(long, value_delimiter = ',', conflicts_with = "data")]
    nodes_list: Vec<usize>,
    /// Benchmark on an existing dataset instead of generated networks.
    #[arg(long)]
    data: Option<PathBuf>,
    /// True model for the truegraph method when --data is used.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Comma-separated subset of full, grafting, cfi, truegraph; truegraph is implied by --truth.
    #[arg(long, value_delimiter = ',', default_value = "full,grafting,cfi")]
    methods: Vec<String>,
    /// Comma-separated cfi thresholds (t_err = t_sig).
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    threshold_list: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    /// Run only the first this many folds.
    #[arg(long)]
    max_folds: Option<usize>,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HistArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    bin_width: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Condition on an instance of this dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Index of the instance to condition on.
    #[arg(long, default_value_t = 0, requires = "data")]
    instance: usize,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<crfind::Error> for CliError {
    fn from(e: crfind::Error) -> Self {
        match e {
            crfind::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => bench::run(a),
        Command::Hist(a) => commands::hist(a),
        Command::Oracle(a) => commands::oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
