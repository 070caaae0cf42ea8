//! Experiment runner for the easy-attention study.
//!
//! A run resolves a TOML config (plus command-line overrides), trains and
//! evaluates the requested models, and writes CSV tables, JSON metrics and
//! SVG figures to `out_dir/<experiment>-<hash>`.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod svg;

use std::path::PathBuf;

pub use config::{Experiment, ExperimentConfig, Overrides, RawConfig, Settings};
pub use error::{CliError, CliResult};
pub use experiments::{Failure, Outcome};

use output::RunDir;

#[derive(Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub outcome: Outcome,
}

impl RunReport {
    pub fn failures(&self) -> &[Failure] {
        self.outcome.failures()
    }
}

pub fn run(config: &ExperimentConfig) -> CliResult<RunReport> {
    let mut dir = RunDir::create(config)?;
    let outcome = match &config.settings {
        Settings::Sine(s) => Outcome::Sine(experiments::sine::run(config, s, &mut dir)?),
        Settings::Svd(s) => Outcome::Svd(experiments::svd::run(config, s, &mut dir)?),
        Settings::Vdp(s) => Outcome::Vdp(experiments::vdp::run(config, s, &mut dir)?),
        Settings::Lorenz(s) => Outcome::Lorenz(Box::new(experiments::lorenz::run(config, s, &mut dir)?)),
    };
    Ok(RunReport {
        dir: dir.path.clone(),
        files: dir.written().to_vec(),
        outcome,
    })
}

/// Sizes the global worker pool from `EAL_THREADS`, when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("EAL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Field {
            path: "EAL_THREADS".into(),
            message: format!("expected a positive integer, got {value:?}"),
        })?;
    // A pool that already exists keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
