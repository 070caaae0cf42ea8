use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eal::{CliError, Experiment, Overrides, RawConfig};

#[derive(Parser)]
#[command(name = "eal", version, about = "Easy-attention experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train easy and self attention on the three-phase sine task.
    SineRecon(Flags),
    /// Decompose the score matrices of a trained self-attention module.
    SvdAnalyze(Flags),
    /// Per-frequency reconstruction of a forced Van der Pol signal.
    VdpRecon(Flags),
    /// Lorenz forecasting with transformers and an LSTM.
    Lorenz(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML experiment file. Without it every knob takes its default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reduced budgets (the default).
    #[arg(long, conflicts_with = "full_scale")]
    desk_scale: bool,
    /// Full data and training budgets.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Add reference predictors (persistence) to forecasting tables.
    #[arg(long)]
    with_baselines: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Self-attention checkpoint for svd-analyze.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Train the module for svd-analyze instead of loading one.
    #[arg(long)]
    train_inline: bool,
}

fn execute(experiment: Experiment, flags: Flags) -> Result<Vec<String>, CliError> {
    eal::init_threads()?;
    let raw = match &flags.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    let overrides = Overrides {
        experiment: Some(experiment),
        full_scale: flags.full_scale,
        seed: flags.seed,
        with_baselines: flags.with_baselines,
        out_dir: flags.out_dir,
        train_inline: flags.train_inline,
        checkpoint: flags.checkpoint,
    };
    let config = raw.resolve(&overrides)?;
    eprintln!("{} config {} seed {}", config.experiment, config.hash(), config.seed);
    let report = eal::run(&config)?;
    println!("{}", report.dir.display());
    for f in &report.files {
        eprintln!("  wrote {}", f.display());
    }
    Ok(report
        .failures()
        .iter()
        .map(|f| format!("{}: {}", f.name, f.message))
        .collect())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, flags) = match cli.command {
        Command::SineRecon(f) => (Experiment::SineRecon, f),
        Command::SvdAnalyze(f) => (Experiment::SvdAnalyze, f),
        Command::VdpRecon(f) => (Experiment::VdpRecon, f),
        Command::Lorenz(f) => (Experiment::Lorenz, f),
    };
    match execute(experiment, flags) {
        Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("{} sub-run(s) failed:", failed.len());
            for f in failed {
                eprintln!("  {f}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
