use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use ba_core::harness::{export_patterns, run_sweep, run_training, ExperimentConfig, Mode};
use clap::{Args, Parser, Subcommand};

/// Beam alignment experiments: beam-map and agent training, evaluation
/// sweeps, classical baselines and beam pattern export.
#[derive(Parser)]
#[command(name = "beamalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the beamforming module.
    TrainMap(Common),
    /// Train a PPO agent with the direct or beamforming map.
    TrainAgent(Common),
    /// Evaluate learned agents and baselines over an SNR sweep.
    Eval(Common),
    /// Evaluate the classical baselines over an SNR sweep.
    Baselines(Common),
    /// Write the reference-gain patterns of a trained map.
    ExportPatterns(Common),
}

#[derive(Args)]
struct Common {
    /// Config file (flat key = value document).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, mode: Mode) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, mode).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::new(mode),
        };
        for o in &self.overrides {
            cfg.set(o).with_context(|| format!("applying --set {o}"))?;
        }
        if let Some(seed) = self.seed {
            cfg.env.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (mode, common) = match &cli.command {
        Command::TrainMap(c) => (Mode::TrainMap, c),
        Command::TrainAgent(c) => (Mode::TrainAgent, c),
        Command::Eval(c) => (Mode::Eval, c),
        Command::Baselines(c) => (Mode::Baselines, c),
        Command::ExportPatterns(c) => (Mode::ExportPatterns, c),
    };
    let cfg = common.resolve(mode)?;
    match mode {
        Mode::TrainMap | Mode::TrainAgent => {
            let s = run_training(&cfg)?;
            println!("updates {}", s.updates);
            println!("best_metric {}", s.best_metric);
            println!("curve {}", s.curve.display());
            println!("latest {}", s.latest.display());
            println!("best {}", s.best.display());
        }
        Mode::Eval | Mode::Baselines => {
            let (path, rows) = run_sweep(&cfg)?;
            for r in &rows {
                println!("{:<10} {:>6} dB  gain {:.4} ({:.2} dB) +- {:.4}", r.method.as_str(), r.snr_db, r.mean_gain, r.mean_gain_db, r.ci95);
            }
            println!("results {}", path.display());
        }
        Mode::ExportPatterns => {
            let (path, rows) = export_patterns(&cfg)?;
            println!("rows {rows}");
            println!("patterns {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
