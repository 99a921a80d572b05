use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use sinkflow::{preset, run_scenario, ExperimentConfig, RunOptions, SchemeName, PRESETS};

#[derive(Parser)]
#[command(name = "sinkflow", version, about = "Sinkhorn potential flows on finite spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Exit with status 0 even if some steps missed their tolerance.
    #[arg(long)]
    best_effort: bool,
    /// Embed the wall-clock time in SVG files (breaks byte-identical reruns).
    #[arg(long)]
    timestamps: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a built-in scenario.
    Scenario {
        /// One of convex1d, nonconvex1d, sphere3, convex2d, vertical_cost.
        name: String,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        tmax: Option<f64>,
        /// flow, sjko_eulerian or sjko_lagrangian.
        #[arg(long)]
        scheme: Option<SchemeName>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

fn execute(cfg: &ExperimentConfig, common: &Common) -> Result<ExitCode> {
    let report = run_scenario(cfg, &RunOptions { timestamps: common.timestamps })?;
    for f in &report.files {
        println!("{}", f.display());
    }
    if !report.relaxed_steps.is_empty() {
        log::warn!("{} steps met only the relaxed complementarity bound", report.relaxed_steps.len());
    }
    if report.converged() {
        return Ok(ExitCode::SUCCESS);
    }
    let n = report.failed_steps.len() + report.comparison.as_ref().map_or(0, |c| c.unconverged_steps.len());
    if common.best_effort {
        log::warn!("{n} steps did not converge (ignored: --best-effort)");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: {n} steps did not converge (rerun with --best-effort to accept)");
        Ok(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, common } => {
            ExperimentConfig::load(&config).map_err(anyhow::Error::from).and_then(|cfg| execute(&cfg, &common))
        }
        Command::Scenario { name, epsilon, tau, tmax, scheme, out, seed, common } => {
            let dir = out.unwrap_or_else(|| PathBuf::from("out").join(&name));
            match preset(&name, &dir) {
                None => Err(anyhow!("unknown scenario `{name}` (available: {})", PRESETS.join(", "))),
                Some(mut cfg) => {
                    if let Some(v) = epsilon {
                        cfg.epsilon = v;
                    }
                    if let Some(v) = tau {
                        cfg.tau = v;
                    }
                    if let Some(v) = tmax {
                        cfg.horizon = v;
                    }
                    if let Some(v) = scheme {
                        cfg.scheme = v;
                    }
                    if let Some(v) = seed {
                        cfg.seed = v;
                    }
                    execute(&cfg, &common)
                }
            }
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
