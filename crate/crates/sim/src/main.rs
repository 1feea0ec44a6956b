use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use psgf_sim::experiment::{cmd_cluster, cmd_prepare, cmd_sweep, cmd_train};
use psgf_sim::ExperimentConfig;

#[derive(Parser)]
#[command(name = "psgf", version, about = "Federated time-series forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults are used when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.share_ratio=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest or synthesize, clean, and write the canonical dataset.
    Prepare,
    /// Cluster clients by DTW distance.
    Cluster,
    /// Train centrally or federated and write logs, report and checkpoints.
    Train,
    /// Run a grid over share and forward ratios and write a trade-off table.
    Sweep,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides).context("config")?;
    match cli.command {
        Command::Prepare => {
            let m = cmd_prepare(&cfg).context("prepare")?;
            let dropped = m.cleaning.as_ref().map_or(0, |c| c.dropped.len());
            println!("prepared {} clients ({} dropped) from {}", m.clients.len(), dropped, m.source);
        }
        Command::Cluster => {
            let s = cmd_cluster(&cfg).context("cluster")?;
            println!("k = {}, sizes {:?}, cost {:.6}", s.k, s.sizes, s.cost);
        }
        Command::Train => {
            let r = cmd_train(&cfg).context("train")?;
            print!("{}", r.to_text());
        }
        Command::Sweep => {
            let rows = cmd_sweep(&cfg).context("sweep")?;
            println!("policy  share  forward  total_comm  pooled_rmse");
            for r in rows {
                println!("{:<7} {:<6} {:<8} {:<11} {:.6}", r.policy, r.share_ratio, r.forward_ratio, r.total_comm, r.pooled_rmse);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
