mod commands;
mod config;
mod data;
mod image;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit status categories.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or arguments (exit 1).
    Usage(String),
    /// Unreadable, invalid or inconsistent data, config or checkpoint (exit 2).
    Data(String),
    /// A check ran and did not pass (exit 3).
    Check(String),
}

impl From<bevmem_core::Error> for Failure {
    fn from(e: bevmem_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Check(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "bevmem", version, about = "Egomotion-aligned BEV working-memory fusion at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a directory of synthetic scenarios.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of scenarios [default: data.train_scenarios].
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: Option<u64>,
        /// Base seed [default: data.train_seed].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a scenario directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario directory [default: paths.data_dir].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output checkpoint [default: paths.checkpoint]. `train_log.jsonl` is
        /// written next to it.
        #[arg(long)]
        out_checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        stage: Stage,
        /// Starting parameters; required for `--stage 2`.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write a JSON report.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train and score ablation variants on paired seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training scenarios [default: generated from the config].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluation scenarios [default: generated from the config].
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', default_value = "no_temporal,twm1,twm4,heatmap_off")]
        variants: Vec<String>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render the overlap heatmap and class maps of one frame.
    Viz {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        frame: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Observation noise used for the prediction.
        #[arg(long, default_value_t = 0.3)]
        noise_sigma: f64,
    },
    /// Finite-difference checks of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupts the adjoint of the named op (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BEVMEM_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Usage(format!("BEVMEM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Gen { config, out, count, seed } => commands::gen(config.as_deref(), &out, count, seed),
        Command::Train { config, data, out_checkpoint, stage, init_checkpoint } => {
            commands::train(config.as_deref(), data, out_checkpoint, stage, init_checkpoint.as_deref())
        }
        Command::Eval { config, checkpoint, data, report } => {
            commands::eval(config.as_deref(), &checkpoint, &data, &report)
        }
        Command::Ablate { config, data, eval_data, variants, report } => {
            commands::ablate(config.as_deref(), data.as_deref(), eval_data.as_deref(), &variants, &report)
        }
        Command::Viz { checkpoint, scenario, frame, out, noise_sigma } => {
            commands::viz(checkpoint.as_deref(), &scenario, frame, &out, noise_sigma)
        }
        Command::Gradcheck { seed, inject_fault } => commands::gradcheck(seed, inject_fault.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
