use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nbq_cli::commands::{self, EvalPath};
use nbq_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "nbq", version, about = "Train, freeze, evaluate and cost n-bit power-of-two networks")]
struct Cli {
    /// TOML run configuration; built-in defaults if absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `KEY=VALUE` with a dotted key, applied after the file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VAL", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantization-aware training; writes metrics.csv, final.nbqc and best.nbqc.
    Train,
    /// Snap a checkpoint to its levels; writes model.nbqf and freeze_report.json.
    Freeze { checkpoint: PathBuf },
    /// Accuracy of a frozen model on the configured test set.
    Eval {
        model: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        path: EvalPath,
    },
    /// Analytic SVPE/VPE comparison; writes hwreport.json and hwreport.txt.
    Hwreport,
    /// Table of the sampling loss and its per-bit change.
    SamplingLoss {
        #[arg(long, default_value = "gaussian")]
        density: String,
        #[arg(long, default_value_t = 8)]
        nmax: u32,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("NBQ_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Config(format!("NBQ_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<String> {
    configure_threads()?;
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = cli.out {
        overrides.push(format!("out={}", toml::Value::String(o.display().to_string())));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Train => commands::cmd_train(&cfg),
        Command::Freeze { checkpoint } => commands::cmd_freeze(&cfg, &checkpoint),
        Command::Eval { model, path } => commands::cmd_eval(&cfg, &model, path),
        Command::Hwreport => commands::cmd_hwreport(&cfg),
        Command::SamplingLoss { density, nmax } => commands::cmd_sampling_loss(&cfg, &density, nmax),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
