//! `rnavel`: simulate, fit, summarize and project RNA-velocity models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Settings;

#[derive(Parser)]
#[command(name = "rnavel", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat TOML file of settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Simulate(Common),
    /// Run the sampler on a dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Credible intervals, WAIC and (given a truth file) accuracy.
    Summarize(Common),
    /// Principal-component coordinates and velocity arrows for plotting.
    Project(Common),
    /// Split groups into subgroups by hierarchical clustering.
    Subgroups(Common),
}

fn resolve(common: &Common) -> Result<Settings, String> {
    let base = match &common.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let s = base.overlay(&common.settings);
    if let Some(n) = s.threads.filter(|&n| n > 0) {
        // Ignore failure: the global pool may already exist.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => resolve(c).map_err(Into::into).and_then(commands::simulate),
        Command::Fit { common, resume } => {
            resolve(common).map_err(Into::into).and_then(|s| commands::fit(s, *resume))
        }
        Command::Summarize(c) => resolve(c).map_err(Into::into).and_then(commands::summarize),
        Command::Project(c) => resolve(c).map_err(Into::into).and_then(commands::project),
        Command::Subgroups(c) => resolve(c).map_err(Into::into).and_then(commands::subgroups),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
