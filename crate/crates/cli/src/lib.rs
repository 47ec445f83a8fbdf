//! Command-line driver: synthetic data generation, single inference runs
//! and the auxiliary-vs-naive experiment grid.

pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;

use anyhow::{bail, Result};
use auxabc::DistanceKind;
use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "auxabc", version, about = "Auxiliary-likelihood ABC-SMC for bioprocess hybrid models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Shipped configuration: `paper` or `desk`.
    #[arg(long, global = true)]
    pub preset: Option<String>,

    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all hardware threads).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Overrides the configured distance for `infer`.
    #[arg(long, global = true)]
    pub method: Option<DistanceKind>,

    /// Print only the final summary.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate observed trajectories from the true parameters.
    Generate,
    /// Run one ABC-SMC inference on a dataset file.
    Infer {
        /// Dataset file (default: <out>/dataset.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run both methods over the (noise, batches) grid.
    Experiment,
    /// Parse and check the configuration, then print it.
    ValidateConfig,
}

impl Cli {
    /// The configuration after applying command-line overrides.
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => bail!("pass --config PATH or --preset paper|desk"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(method) = self.method {
            cfg.engine.distance = method;
        }
        if self.workers == Some(0) {
            bail!("--workers must be at least 1");
        }
        Ok(cfg)
    }
}

/// Runs the parsed command. `Ok(false)` means some experiment cell failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let cfg = cli.resolve_config()?;
    if let Some(n) = cli.workers {
        // Ignored if a pool already exists (e.g. in tests); results do not
        // depend on the worker count.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Generate => {
            let path = commands::generate(&cfg)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Infer { data } => {
            let data = data.clone().unwrap_or_else(|| cfg.output_dir.join("dataset.csv"));
            let summary = commands::infer(&cfg, &data, cli.quiet)?;
            println!("{summary}");
            Ok(true)
        }
        Command::Experiment => {
            let summary = commands::experiment(&cfg, cli.quiet)?;
            println!("{summary}");
            Ok(summary.failed_cells() == 0)
        }
        Command::ValidateConfig => {
            print!("{}", toml::to_string_pretty(&cfg)?);
            println!("# ok: {} grid cells", cfg.cells().len());
            Ok(true)
        }
    }
}
