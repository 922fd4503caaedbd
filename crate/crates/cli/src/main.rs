//! `bgnn` command-line front end.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bgnn::baselines::Baseline;
use bgnn::{Error, Result};
use clap::{Args, Parser, Subcommand};

use config::{parse_assignment, parse_entries, resolve, Entry, Resolved};

#[derive(Parser)]
#[command(name = "bgnn", version, about = "Graph neural network beamforming for multi-user MISO downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Flat `key = value` config file (a previous run's manifest works too).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `run.profile` (desk or full).
    #[arg(long)]
    profile: Option<String>,
    /// Shorthand for `model.mode` (sum or min).
    #[arg(long)]
    mode: Option<String>,
    /// Shorthand for `scenario.layout` (colocated or cellfree).
    #[arg(long)]
    layout: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes model.ckpt, report.txt and manifest.txt.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Compare a model with baselines over an (N, K, SNR) grid; writes eval.csv and timing.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Shorthand for `eval.baselines`, e.g. wmmse,zf,mrt.
        #[arg(long)]
        baselines: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Utility ratio against WMMSE (sum) or SINR balancing (min) at unseen sizes.
    Generalize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Utility after each message-passing round.
    Trajectory {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Report raw per-round values for this instance file instead of a sampled mean.
        #[arg(long, value_name = "FILE")]
        instance: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write one seeded test instance as text.
    ExportInstance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        /// Sample index within the (N, K) test stream.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// SNR in dB; defaults to `scenario.snr_db`.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Output file; stdout when absent.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Validate an instance file and report each method's utility on it.
    ImportInstance {
        #[command(flatten)]
        common: Common,
        #[arg(value_name = "FILE")]
        path: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Shorthand for `eval.baselines`.
        #[arg(long)]
        baselines: Option<String>,
    },
}

fn flag(key: &str, value: Option<String>, name: &str) -> Option<Entry> {
    value.map(|value| Entry { key: key.into(), value, origin: name.into() })
}

fn load_config(common: &Common, baselines: Option<String>) -> Result<Resolved> {
    let file = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_entries(&text, &path.display().to_string())?
        }
        None => Vec::new(),
    };
    let sets = common.sets.iter().map(|s| parse_assignment(s, "--set")).collect::<Result<Vec<_>>>()?;
    let flags: Vec<Entry> = [
        flag("run.seed", common.seed.map(|s| s.to_string()), "--seed"),
        flag("run.profile", common.profile.clone(), "--profile"),
        flag("model.mode", common.mode.clone(), "--mode"),
        flag("scenario.layout", common.layout.clone(), "--layout"),
        flag("eval.baselines", baselines, "--baselines"),
    ]
    .into_iter()
    .flatten()
    .collect();
    resolve(&file, &sets, &flags)
}

fn with_model(common: &Common, baselines: Option<String>, ckpt: &Path) -> Result<(config::RunConfig, bgnn::bgnn::BgnnParams)> {
    let Resolved { mut config, mode_explicit } = load_config(common, baselines)?;
    let params = commands::load_model(&mut config, mode_explicit, ckpt)?;
    Ok((config, params))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, out } => commands::cmd_train(&load_config(&common, None)?.config, &out),
        Command::Eval { common, checkpoint, baselines, out } => {
            let (cfg, params) = with_model(&common, baselines, &checkpoint)?;
            commands::cmd_eval(&cfg, &params, &checkpoint, &out)
        }
        Command::Generalize { common, checkpoint, out } => {
            let (cfg, params) = with_model(&common, None, &checkpoint)?;
            commands::cmd_generalize(&cfg, &params, &checkpoint, &out)
        }
        Command::Trajectory { common, checkpoint, instance, out } => {
            let (cfg, params) = with_model(&common, None, &checkpoint)?;
            commands::cmd_trajectory(&cfg, &params, &checkpoint, instance.as_deref(), &out)
        }
        Command::ExportInstance { common, n, k, index, snr_db, out } => {
            let cfg = load_config(&common, None)?.config;
            commands::cmd_export_instance(&cfg, n, k, index, snr_db.unwrap_or(cfg.snr_db), out.as_deref())
        }
        Command::ImportInstance { common, path, checkpoint, baselines } => {
            let (cfg, params) = match &checkpoint {
                Some(ckpt) => {
                    let (cfg, params) = with_model(&common, baselines, ckpt)?;
                    (cfg, Some(params))
                }
                None => (load_config(&common, baselines)?.config, None),
            };
            let bs: Vec<Baseline> = cfg.eval_baselines();
            print!("{}", commands::cmd_import_instance(&cfg, &path, params.as_ref(), &bs)?);
            Ok(())
        }
    }
}

/// 2 for bad configuration or input files, 3 for numerical failure, 1 otherwise.
fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        return 3;
    }
    match e {
        Error::Config(_) | Error::Format { .. } | Error::InvalidInstance(_) | Error::Shape(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
