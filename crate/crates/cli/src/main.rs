use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use proedit_cli::commands::{self, RunOptions, SnapshotSel};
use proedit_cli::RunConfig;

#[derive(Parser)]
#[command(name = "proedit", version, about = "Progressive 3D scene editing")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct Pick {
    /// Snapshot index, `last`, or `medium` (after 40% of the subtasks).
    #[arg(long, default_value = "last")]
    snapshot: SnapshotSel,
}

#[derive(Subcommand)]
enum Cmd {
    /// Measure difficulties and write the subtask schedule.
    Decompose {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full progressive edit.
    Run {
        #[command(flatten)]
        common: Common,
        /// Serve the control API on this address, e.g. 127.0.0.1:8080.
        #[arg(long)]
        serve: Option<String>,
        /// Interleave edits and training on one thread for bit-identical reruns.
        #[arg(long)]
        deterministic: bool,
        /// Continue after the last completed stage in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Render a snapshot from one of the configured views.
    Preview {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pick: Pick,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy a snapshot's checkpoint out with a manifest.
    Export {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pick: Pick,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Cmd::Decompose { common } => {
            let cfg = RunConfig::load(&common.config)?;
            let schedule = commands::decompose(&cfg)?;
            println!("{}", commands::schedule_table(&schedule));
        }
        Cmd::Run {
            common,
            serve,
            deterministic,
            resume,
        } => {
            let cfg = RunConfig::load(&common.config)?;
            let outcome = commands::run(&cfg, &RunOptions { serve, deterministic, resume })?;
            println!(
                "{:?}: {} snapshots, {} gaussians in the final scene",
                outcome.mode,
                outcome.snapshots.len(),
                outcome.cloud.len()
            );
        }
        Cmd::Preview { common, pick, view, out } => {
            let cfg = RunConfig::load(&common.config)?;
            commands::preview(&cfg, pick.snapshot, view, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Export { common, pick, out } => {
            let cfg = RunConfig::load(&common.config)?;
            let m = commands::export(&cfg, pick.snapshot, &out)?;
            println!("exported snapshot {} ({} gaussians) to {}", m.stage_index, m.n_gaussians, out.display());
        }
    }
    Ok(())
}
