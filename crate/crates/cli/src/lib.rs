//! Command-line driver: parses a run configuration, executes one
//! experiment and writes its artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

/// Exit status when a `validate` check fails.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit status for configuration and I/O problems.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for numerical failures inside a run.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "smallmass", version, about = "Small-mass hierarchy convergence experiments")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key=value` applied on top of the file, e.g. `mc.seed=3`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write full trajectories of one path at every mass.
    Simulate {
        #[arg(long, default_value_t = 0)]
        path: u64,
    },
    /// Strong-error study: errors.csv, report.json and a plot script.
    Converge,
    /// Convergence-in-probability study: exceedance.csv.
    Probconverge,
    /// Check the model's coefficients: validation.json.
    Validate,
    /// Print the summary stored in a report.json.
    Summary {
        /// Defaults to `<out>/report.json`.
        report: Option<PathBuf>,
    },
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out.clone().or_else(|| cfg.map(|c| c.output.dir.clone())).unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(cli: &Cli) -> Result<commands::Outcome> {
    if let Command::Summary { report } = &cli.command {
        let path = report.clone().unwrap_or_else(|| out_dir(cli, None).join("report.json"));
        return commands::summary(&path);
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError::Invalid {
        key: "--config".into(),
        msg: "this subcommand needs a configuration file".into(),
    })?;
    let cfg = RunConfig::load(path, &cli.overrides)?;
    let out = out_dir(cli, Some(&cfg));
    match &cli.command {
        Command::Simulate { path } => commands::simulate(&cfg, &out, *path),
        Command::Converge => commands::converge(&cfg, &out),
        Command::Probconverge => commands::probconverge(&cfg, &out),
        Command::Validate => commands::validate(&cfg, &out),
        Command::Summary { .. } => unreachable!("handled above"),
    }
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: &Cli) -> i32 {
    let pool = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(outcome) => {
            print!("{}", outcome.text);
            for f in &outcome.files {
                log::info!("wrote {}", f.display());
            }
            if outcome.success {
                0
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Core(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            }
        }
    }
}
