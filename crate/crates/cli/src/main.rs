//! `hanam` command-line driver.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 internal error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "hanam", version, about = "Homophily-adjusted network autocorrelation models")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single configuration override `key=value`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master seed (takes precedence over HANAM_SEED and the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Increase log output; repeat for more.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Print every configuration key with its effective value and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Invocation>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invocation {
    /// Fit one or more model families to observed data.
    Fit {
        /// Edge list `src,dst[,weight]`.
        #[arg(long)]
        network: PathBuf,
        /// Outcome file `id,y`; fixes the node order.
        #[arg(long)]
        outcome: PathBuf,
        /// Node covariates `id,<columns>`.
        #[arg(long)]
        covariates: Option<PathBuf>,
        /// Latent draws file; without it the built-in sampler is run.
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Comma-separated families: HANE, HAND, NAM_EFFECTS, NAM_DISTURBANCES.
        #[arg(long, default_value = "HANE")]
        family: String,
        /// Maximum likelihood instead of MAP (NAM families only).
        #[arg(long)]
        mle: bool,
        /// Standardize continuous covariates.
        #[arg(long)]
        standardize: bool,
    },
    /// Generate a synthetic network, covariate, outcome and oracle latent draws.
    Simulate,
    /// Check the forward process against its limiting distribution.
    ValidateLimit,
    /// Run the simulation grid and write bias/MSE/coverage tables.
    Scenarios,
    /// Draw latent positions for an observed network.
    SampleLatent {
        /// Edge list `src,dst[,weight]`.
        #[arg(long)]
        network: PathBuf,
        /// Any CSV whose first column is `id`; fixes the node order.
        #[arg(long)]
        nodes: PathBuf,
        /// Node covariates entering the edge model.
        #[arg(long)]
        covariates: Option<PathBuf>,
        /// Standardize continuous covariates.
        #[arg(long)]
        standardize: bool,
    },
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<hanam::Error> for CliError {
    fn from(e: hanam::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Seed from the flag, else `HANAM_SEED`, else the config value.
fn resolve_seed(flag: Option<u64>, env: Option<String>, config: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("HANAM_SEED=`{v}` is not an unsigned integer"))),
        None => Ok(config),
    }
}

fn build_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p).map_err(CliError::Input)?,
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v).map_err(|e| CliError::Input(format!("--set {s}: {e}")))?;
    }
    cfg.seed = resolve_seed(cli.seed, std::env::var("HANAM_SEED").ok(), cfg.seed)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.verbosity = cfg.verbosity.max(cli.verbose);
    Ok(cfg)
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = build_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.render_documented());
        return Ok(());
    }
    let Some(invocation) = cli.command else {
        return Err(CliError::Input("no command given; see `hanam --help`".into()));
    };
    let (cfg, invocation) = match invocation {
        Invocation::Rerun { manifest } => {
            let m = output::Manifest::read(&manifest).map_err(CliError::Input)?;
            let mut again = RunConfig::default();
            again.apply_text(&m.config, &manifest.display().to_string()).map_err(CliError::Input)?;
            again.seed = m.seed;
            again.output_dir = cfg.output_dir.clone();
            again.jobs = cfg.jobs;
            again.verbosity = cfg.verbosity;
            if matches!(m.invocation, Invocation::Rerun { .. }) {
                return Err(CliError::Input(format!("{}: manifest records a rerun", manifest.display())));
            }
            (again, m.invocation)
        }
        other => (cfg, other),
    };
    init_logging(cfg.verbosity);
    cfg.validate().map_err(CliError::Input)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", cfg.output_dir.display())))?;
    commands::dispatch(&cfg, &invocation)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(4)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence_is_flag_then_env_then_config() {
        assert_eq!(resolve_seed(Some(5), Some("7".into()), 9).unwrap(), 5);
        assert_eq!(resolve_seed(None, Some("7".into()), 9).unwrap(), 7);
        assert_eq!(resolve_seed(None, None, 9).unwrap(), 9);
        assert!(resolve_seed(None, Some("x".into()), 9).is_err());
    }
}
