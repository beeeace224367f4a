use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skillagg::pipeline::Method;
use skillagg::ErrorKind;

/// `println!` that ignores a closed stdout (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "skillagg", version, about = "Aggregate probabilistic judgments from unreliable judges")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps and multi-method runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Pipeline configuration JSON with per-method sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Input dataset plus flags that override the config file.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// judgments.jsonl
    #[arg(long)]
    pub data: PathBuf,
    /// embeddings.bin (required by neural methods)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Labeled items held out for model selection; 0 disables.
    #[arg(long)]
    pub dev_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Regularization weight for SkillAggregation.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Candidate λ values selected on the dev set.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Dawid-Skene EM iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset from a world spec.
    Generate {
        /// World spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Also estimate the Bayes-optimal accuracy with this many samples.
        #[arg(long)]
        oracle_samples: Option<usize>,
    },
    /// Check that judgment and embedding files ingest cleanly.
    Validate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Run one aggregation method.
    Aggregate {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score estimate files against labels.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Estimate files; the method name is taken from the file name.
        #[arg(long, required = true, num_args = 1..)]
        estimates: Vec<PathBuf>,
        /// Method reports with learned skills, for slope-accuracy correlation.
        #[arg(long, num_args = 1..)]
        skills: Vec<PathBuf>,
    },
    /// Run several methods on one split and write a combined report.
    Run {
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "majority,dawid-skene,crowdlayer,skillagg")]
        methods: Vec<Method>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Average two judgment files over the same items (e.g. response-swapped runs).
    AverageJudgments {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Experiment sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
}

#[derive(Subcommand, Debug)]
pub enum SweepCommand {
    /// Accuracy on judge subsets, next to majority voting.
    Subsets {
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "skillagg")]
        methods: Vec<Method>,
        /// Subset sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Sample this many subsets per size instead of enumerating all.
        #[arg(long)]
        sample: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Accuracy relative to majority voting on random dataset subsets.
    Sizes {
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "skillagg")]
        methods: Vec<Method>,
        /// Subset item counts.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// SkillAggregation over a grid of λ values.
    Lambda {
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[command(flatten)]
        data: DataArgs,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: skillagg::Error| e.to_string())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let g = &cli.global;
    let result = match cli.command {
        Command::Generate { spec, oracle_samples } => commands::generate(g, &spec, oracle_samples),
        Command::Validate { data, embeddings } => commands::validate(&data, embeddings.as_deref()),
        Command::Aggregate { method, data } => commands::aggregate(g, method, &data),
        Command::Evaluate { data, estimates, skills } => commands::evaluate(g, &data, &estimates, &skills),
        Command::Run { methods, data } => commands::run(g, &methods, &data),
        Command::AverageJudgments { a, b, out } => commands::average(g, &a, &b, &out),
        Command::Sweep(sweep) => commands::sweep(g, sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
