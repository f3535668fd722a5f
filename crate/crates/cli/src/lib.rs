//! Experiment grid runner for layer-wise probing.
//!
//! A TOML config names the data (synthetic or files), the NMT grid, the probe
//! tasks and layers, the baselines and the significance settings. The runner
//! trains and caches every cell, then the report stage rebuilds all tables
//! from the prediction dumps.

pub mod cache;
pub mod config;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod report;
pub mod runner;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::CliError;
pub use report::{write_reports, ReportSet, Results};
pub use runner::{Runner, Stage};

#[derive(Debug, Parser)]
#[command(name = "layerprobe", version, about = "Probe NMT encoder layers for tagging information")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Run only this seed instead of `run.seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel cells; overrides `run.jobs`.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory; overrides `run.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// No progress lines on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train (or initialize, for the control) every NMT cell.
    TrainNmt(Common),
    /// Train the skip-gram tables for the unsupervised-embedding baseline.
    TrainEmbeddings(Common),
    /// Write per-layer features for every probe source.
    Extract(Common),
    /// Train and evaluate every probe.
    Probe(Common),
    /// Fit MFT and train Word2Tag.
    Baseline(Common),
    /// Recompute results.csv and bleu.csv from the prediction dumps.
    Evaluate(Common),
    /// Approximate randomization tests between layers and against the control.
    Significance(Common),
    /// Every stage, then every report.
    Run(Common),
    /// Every report file from cached results.
    Report(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::TrainNmt(c)
            | Command::TrainEmbeddings(c)
            | Command::Extract(c)
            | Command::Probe(c)
            | Command::Baseline(c)
            | Command::Evaluate(c)
            | Command::Significance(c)
            | Command::Run(c)
            | Command::Report(c) => c,
        }
    }
}

/// Loads the config and applies command-line overrides.
pub fn load_config(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.run.seeds = vec![seed];
    }
    if let Some(jobs) = c.jobs {
        cfg.run.jobs = jobs;
    }
    if let Some(out) = &c.out {
        cfg.run.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Executes one parsed command; returns the lines to print on success.
pub fn execute(cmd: &Command) -> Result<Vec<String>, CliError> {
    let common = cmd.common();
    let runner = Runner::new(load_config(common)?)?.quiet(common.quiet);
    let stage = |s: Stage| -> Result<Vec<String>, CliError> {
        let sum = runner.run_stage(s)?;
        Ok(vec![format!("{s:?}: {} ran, {} cached", sum.ran, sum.cached)])
    };
    let reports = |set| -> Result<Vec<String>, CliError> {
        Ok(write_reports(&runner, set)?
            .into_iter()
            .map(|p| p.display().to_string())
            .collect())
    };
    match cmd {
        Command::TrainNmt(_) => stage(Stage::Nmt),
        Command::TrainEmbeddings(_) => stage(Stage::Embeddings),
        Command::Extract(_) => stage(Stage::Extract),
        Command::Probe(_) => stage(Stage::Probe),
        Command::Baseline(_) => stage(Stage::Baseline),
        Command::Evaluate(_) => reports(ReportSet::Evaluate),
        Command::Significance(_) => reports(ReportSet::Significance),
        Command::Report(_) => reports(ReportSet::All),
        Command::Run(_) => {
            runner.run_all()?;
            reports(ReportSet::All)
        }
    }
}
