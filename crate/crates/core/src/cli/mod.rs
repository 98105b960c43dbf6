//! Command-line front end.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::chip::ChipError;
use crate::controller::ControllerError;
use crate::physics::PhysicsError;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Chip(#[from] ChipError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

#[derive(Debug, Parser)]
#[command(
    name = "cryotherm",
    version,
    about = "Cryogenic sensor simulator and measurement procedures"
)]
pub struct Cli {
    /// Run configuration (key = value); defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides sim.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Independent runs with seeds seed, seed+1, ... in out/replica_NNN.
    #[arg(long, global = true, default_value_t = 1)]
    pub replicas: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Diode and comparator trim calibration.
    Calibrate {
        /// Ambient grid START:STOP:STEP for the diode curve.
        #[arg(long, default_value = commands::DEFAULT_DIODE_GRID)]
        diode_grid: String,
    },
    /// Retrapping sweeps over an ambient grid, code-temperature map and resolution.
    Sweep {
        #[arg(long, default_value = commands::DEFAULT_SWEEP)]
        ambients: String,
        #[arg(long, default_value = commands::DEFAULT_DIODE_GRID)]
        diode_grid: String,
    },
    /// DAC transfer, DNL and INL for the configured mismatch draw.
    Linearity,
    /// External I-V loop through the Kelvin terminals at a die temperature.
    Iv {
        #[arg(long, default_value_t = 0.4)]
        temperature: f64,
        #[arg(long, default_value_t = 2.6e-6)]
        i_max: f64,
        #[arg(long, default_value_t = 400)]
        steps: usize,
    },
    /// Switching and retrapping current histograms from repeated loops.
    Hist {
        #[arg(long, default_value_t = 0.4)]
        temperature: f64,
        #[arg(long, default_value_t = 10_000)]
        loops: usize,
        /// Defaults to 1.2x the mean switching current.
        #[arg(long)]
        i_max: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Single-temperature threshold detector over an ambient ramp.
    Monitor {
        /// Die temperature to detect.
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        /// Ambient ramp START:STOP:STEP, one evaluation per point.
        #[arg(long, default_value = commands::DEFAULT_RAMP)]
        ramp: String,
    },
}

pub fn run_command(cfg: &RunConfig, out: &Path, cmd: &Command) -> Result<Vec<String>, CliError> {
    match cmd {
        Command::Calibrate { diode_grid } => commands::calibrate(cfg, out, diode_grid),
        Command::Sweep {
            ambients,
            diode_grid,
        } => commands::sweep(cfg, out, ambients, diode_grid),
        Command::Linearity => commands::linearity(cfg, out),
        Command::Iv {
            temperature,
            i_max,
            steps,
        } => commands::iv(cfg, out, *temperature, *i_max, *steps),
        Command::Hist {
            temperature,
            loops,
            i_max,
            steps,
            bins,
        } => commands::hist(
            cfg,
            out,
            &commands::HistArgs {
                t_local: *temperature,
                loops: *loops,
                i_max: *i_max,
                steps: *steps,
                bins: *bins,
            },
        ),
        Command::Monitor { threshold, ramp } => commands::monitor(cfg, out, *threshold, ramp),
    }
}

/// Run one or more replicas. Returns printable lines or the first error.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if cli.replicas == 0 {
        return Err(CliError::Usage("--replicas must be at least 1".into()));
    }
    if cli.replicas == 1 {
        return run_command(&cfg, &cli.out, &cli.command);
    }

    let base = cfg.seed();
    let results: Vec<Result<Vec<String>, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cli.replicas)
            .map(|k| {
                let mut c = cfg.clone();
                c.set_seed(base.wrapping_add(k as u64));
                let out = cli.out.join(format!("replica_{k:03}"));
                let cmd = cli.command.clone();
                s.spawn(move || run_command(&c, &out, &cmd))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica thread panicked"))
            .collect()
    });
    let mut lines = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        for l in r? {
            lines.push(format!("[replica {k:03}] {l}"));
        }
    }
    Ok(lines)
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e @ (CliError::Usage(_) | CliError::Config { .. })) => {
            eprintln!("error: {e}\n\n{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
