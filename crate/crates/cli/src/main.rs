use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod stages;

use config::{ConfigError, RunConfig};
use stages::Stage;

#[derive(Parser)]
#[command(name = "hmig", version, about = "Harvest migration pipeline: synthetic worlds, CDR ingest through regression")]
struct Cli {
    /// Run configuration (TOML); for `synth`, a world configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured shard count.
    #[arg(long, global = true)]
    shards: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and a run configuration for it.
    Synth {
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Run ingest → residence → metrics → phenology → panel → fit.
    Run {
        /// Recompute from this stage even if it completed.
        #[arg(long, value_enum)]
        stage_from: Option<Stage>,
    },
    /// Plot-ready CSVs from a completed run.
    Figures,
    /// Total seasonal migrants implied by the high-cultivation coefficient.
    Totals {
        /// Use this coefficient instead of refitting.
        #[arg(long)]
        coefficient: Option<f64>,
    },
    /// Placebo peak-date battery.
    Placebo {
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Perturbation, precision split, sample restrictions and outcome variants.
    Robustness,
}

fn load(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| config::config_error("--config is required"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.shards {
        cfg.shards = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> anyhow::Result<String> {
    match &cli.command {
        Command::Synth { out } => commands::synth(cli.config.as_deref(), cli.seed, out),
        Command::Run { stage_from } => stages::run(load(cli)?, *stage_from),
        Command::Figures => commands::figures(load(cli)?),
        Command::Totals { coefficient } => commands::totals(load(cli)?, *coefficient),
        Command::Placebo { iterations } => commands::placebo(load(cli)?, *iterations),
        Command::Robustness => commands::robustness(load(cli)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(out) => {
            print!("{out}");
            if !out.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
