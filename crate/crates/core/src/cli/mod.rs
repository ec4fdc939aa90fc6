//! JSON-configured experiment runner.
//!
//! `nlexit <experiment> --config path.json [--out dir] [--threads n]` parses
//! a strict config, runs the experiment on a rayon pool of the requested
//! size and writes `report.json`, `summary.md` and any artifacts to `--out`.
//! Results do not depend on the thread count.

pub mod config;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

use clap::Parser;

use crate::error::{Error, Result};
use config::{parse_config, Experiment};

#[derive(Debug, Parser)]
#[command(name = "nlexit", version, about = "Exit times under sublinear expectation")]
pub struct Args {
    pub experiment: Experiment,
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; falls back to the config's `output_dir`, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Runs one experiment and writes its outputs.
pub fn execute(args: &Args) -> Result<report::Report> {
    let text = std::fs::read_to_string(&args.config)?;
    let cfg = parse_config(&text)?;
    if cfg.experiment != args.experiment {
        return Err(Error::Config {
            pointer: "/experiment".into(),
            message: format!(
                "config is for `{}` but `{}` was requested",
                cfg.experiment.name(),
                args.experiment.name()
            ),
        });
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| run::run(&cfg))?;
    write_outputs(&output_dir(args, &cfg), &outcome)?;
    Ok(outcome.report)
}

pub fn output_dir(args: &Args, cfg: &config::LoadedConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_outputs(dir: &Path, outcome: &run::Outcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), outcome.report.to_json()?)?;
    std::fs::write(dir.join("summary.md"), outcome.report.summary_markdown())?;
    for (name, bytes) in &outcome.artifacts {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}
