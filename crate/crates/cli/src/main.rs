//! `rpslab` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgMatches, Args, CommandFactory, Parser, Subcommand};
use rpslab::config::KvConfig;

#[derive(Parser)]
#[command(name = "rpslab", version, about = "Lossy model-averaging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value file; a CSV written by this tool also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Moments of the mixing matrix and their closed-form bounds.
    Mixing {
        #[command(flatten)]
        common: Common,
        /// Worker counts: `4`, `2,4,8` or `2..8`.
        #[arg(long)]
        n: Option<String>,
        /// Drop rates, comma separated.
        #[arg(long)]
        p: Option<String>,
        /// exact or mc.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        owner_mode: Option<String>,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Train on a synthetic quadratic.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        d: Option<String>,
        #[arg(long)]
        iterations: Option<String>,
        /// Drop rate; a list with `--strategy both`.
        #[arg(long)]
        p: Option<String>,
        /// A positive number or `corollary1`.
        #[arg(long)]
        gamma: Option<String>,
        /// rps, gradient-averaging, perfect-network or both.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        owner_mode: Option<String>,
        #[arg(long)]
        heterogeneity: Option<String>,
        #[arg(long)]
        noise_sigma: Option<String>,
        #[arg(long)]
        mu: Option<String>,
        #[arg(long)]
        l: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        /// Number of consecutive seeds starting at `seed`.
        #[arg(long)]
        seeds: Option<String>,
        /// Fixed seed for the task, or `none` to follow `seed`.
        #[arg(long)]
        task_seed: Option<String>,
    },
    /// Evaluate the closed-form bounds for one parameter set.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        gamma: Option<String>,
        #[arg(long)]
        l: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long)]
        zeta: Option<String>,
        #[arg(long)]
        f0: Option<String>,
        #[arg(long)]
        fstar: Option<String>,
        #[arg(long)]
        iterations: Option<String>,
        /// A number or `exact`.
        #[arg(long)]
        alpha2: Option<String>,
        /// A number or `exact`.
        #[arg(long)]
        beta: Option<String>,
    },
    /// Web and learning traffic sharing one switch.
    Netsim {
        #[command(flatten)]
        common: Common,
        /// Web message rates, comma separated.
        #[arg(long)]
        lambda: Option<String>,
        /// Learning buffer sizes in bytes; `inf` for unbounded.
        #[arg(long)]
        buffers: Option<String>,
        /// shared-fifo or strict-priority.
        #[arg(long)]
        scheduling: Option<String>,
        #[arg(long)]
        servers: Option<String>,
        #[arg(long)]
        link_rate: Option<String>,
        #[arg(long)]
        packet_bytes: Option<String>,
        #[arg(long)]
        web_bytes: Option<String>,
        #[arg(long)]
        learning_load: Option<String>,
        #[arg(long)]
        learning_burst: Option<String>,
        /// Simulated seconds per run.
        #[arg(long)]
        duration: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        seeds: Option<String>,
        /// Completion targets in ms for the sustainable-rate table, or `none`.
        #[arg(long)]
        target_ms: Option<String>,
        #[arg(long)]
        lambda_max: Option<String>,
    },
}

/// Flags given on the command line, as config pairs.
fn flag_overrides(matches: &ArgMatches) -> KvConfig {
    let mut cfg = KvConfig::new();
    for id in matches.ids() {
        let id = id.as_str();
        if id == "config" || id == "out" || id == "common" {
            continue;
        }
        if let Ok(Some(v)) = matches.try_get_one::<String>(id) {
            cfg.set(id, v.clone());
        }
    }
    cfg
}

fn resolve(common: &Common, matches: &ArgMatches, defaults: &[(&str, &str)]) -> anyhow::Result<KvConfig> {
    let keys: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
    let mut cfg = KvConfig::new();
    for (k, v) in defaults {
        cfg.set(k, *v);
    }
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file = if text.starts_with("# rpslab") {
            KvConfig::from_csv_header(&text, &keys)?
        } else {
            KvConfig::parse(&text, &keys)?
        };
        cfg.overlay(&file);
    }
    cfg.overlay(&flag_overrides(matches));
    Ok(cfg)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<rpslab::Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn run() -> anyhow::Result<()> {
    let matches = Cli::command().get_matches();
    let cli = <Cli as clap::FromArgMatches>::from_arg_matches(&matches)?;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::Mixing { common, .. } => {
            let cfg = resolve(common, sub, commands::MIXING_KEYS)?;
            commands::mixing(&cfg, &common.out)
        }
        Command::Train { common, .. } => {
            let cfg = resolve(common, sub, commands::TRAIN_KEYS)?;
            commands::train(&cfg, &common.out)
        }
        Command::Bounds { common, .. } => {
            let cfg = resolve(common, sub, commands::BOUNDS_KEYS)?;
            commands::bounds(&cfg, &common.out)
        }
        Command::Netsim { common, .. } => {
            let cfg = resolve(common, sub, commands::NETSIM_KEYS)?;
            commands::netsim(&cfg, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
