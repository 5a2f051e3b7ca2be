//! `meshfuse`: synthetic datasets, anchor calibration, scenario runs and range
//! evaluation driven by a flat configuration file.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "meshfuse", version, about)]
struct Cli {
    /// Configuration file of `key = value` lines; defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set strategy=dp`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; takes precedence over the `output` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress and calibration warnings.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write ground truth, IMU, barometer and range CSVs, one directory per seed.
    Generate,
    /// Calibrate every unknown anchor over the whole flight.
    Calibrate {
        /// Directory holding one `seed_<n>` dataset per configured seed.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the fusion scenario with calibration at the configured triggers.
    Run {
        #[arg(long)]
        data: PathBuf,
    },
    /// Per-pair range bias and noise against ground truth.
    EvalRanges {
        #[arg(long)]
        data: PathBuf,
    },
    /// Cycle rate of a fully meshed network.
    MeshRate {
        #[arg(long)]
        nodes: usize,
        /// Slot duration, s.
        #[arg(long)]
        slot: f64,
    },
    /// List the accepted configuration keys.
    ConfigKeys,
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf), CliError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(CliError::io(path))?,
        None => String::new(),
    };
    let config = RunConfig::parse(&text, &cli.overrides)?;
    let out = cli.out.clone().unwrap_or_else(|| config.output.clone());
    Ok((config, out))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::MeshRate { nodes, slot } => return commands::mesh_rate(*nodes, *slot, &mut std::io::stdout()),
        Command::ConfigKeys => {
            for (key, meaning) in config::KEYS {
                println!("{key:<28} {meaning}");
            }
            return Ok(());
        }
        _ => {}
    }
    let (config, out) = load(cli)?;
    match &cli.command {
        Command::Generate => commands::generate(&config, &out),
        Command::Calibrate { data } => commands::calibrate(&config, data, &out),
        Command::Run { data } => commands::run(&config, data, &out),
        Command::EvalRanges { data } => commands::eval_ranges(&config, data, &out),
        Command::MeshRate { .. } | Command::ConfigKeys => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one line: {"error":"<kind>","message":"..."}
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
