//! `drident`: generate data, train, evaluate, check gradients and run the
//! ablations from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{Profile, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "drident", version, about = "Joint demand-response agent and baseline identification")]
struct Cli {
    /// TOML run configuration; keys override the profile defaults.
    #[arg(long, global = true, env = "DRIDENT_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed for data generation, training and checks.
    #[arg(long, global = true, env = "DRIDENT_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "DRIDENT_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, env = "DRIDENT_PROFILE", default_value_t = Profile::Full)]
    profile: Profile,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with manifest and checksums.
    Datagen,
    /// Warm start and jointly train on a dataset; writes a report and checkpoint.
    Train {
        /// Dataset directory (defaults to `<out>/data`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Baseline estimates of a trained checkpoint on a dataset's test split.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Flip the sign of one KKT block, given as `row,col`.
        #[arg(long, hide = true, value_parser = parse_block)]
        inject_fault: Option<(usize, usize)>,
    },
    /// Noise sweep or mixture identification.
    Ablate {
        #[arg(long, value_enum)]
        mode: AblateMode,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblateMode {
    Noise,
    Mixture,
}

fn parse_block(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((parse(r)?, parse(c)?))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = RunConfig::load(cli.profile, cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.set_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    match cli.command {
        Command::Datagen => commands::datagen(&cfg).map(|_| true),
        Command::Train { data } => {
            cfg.paths.data = data.or(cfg.paths.data);
            commands::train(&cfg).map(|_| true)
        }
        Command::Evaluate { data, checkpoint } => {
            cfg.paths.data = data.or(cfg.paths.data);
            cfg.paths.checkpoint = checkpoint.or(cfg.paths.checkpoint);
            commands::evaluate(&cfg).map(|_| true)
        }
        Command::Gradcheck { inject_fault } => {
            cfg.gradcheck.inject_fault = inject_fault.or(cfg.gradcheck.inject_fault);
            commands::gradcheck(&cfg)
        }
        Command::Ablate { mode, repeats } => {
            if let Some(r) = repeats {
                cfg.ablate.repeats = r;
            }
            commands::ablate(&cfg, mode).map(|_| true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
