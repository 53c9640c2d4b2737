use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use hydra_cli::commands::{self, AblateOptions, EvalOptions, SampleOptions, Suite, TrainOptions};
use hydra_cli::config::RunConfig;
use hydra_cli::parallel::threads_from_env;

/// Hybrid-memory video world model at desk scale.
///
/// Worker threads for data generation and evaluation come from
/// HYDRA_THREADS (default: all cores).
#[derive(Parser)]
#[command(name = "hydra", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a filtered dataset of event-bearing clips.
    Datagen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of clips.
        #[arg(long)]
        clips: Option<usize>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Total optimizer steps (overrides the config).
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Predict the target frames of one clip.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clip: String,
        #[arg(long)]
        n_ctx: Option<usize>,
        /// Sampler steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Score a checkpoint on a held-out dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Train and evaluate one ablation grid.
    Ablate {
        /// kernel, tokens or retrieval.
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        test_data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>, steps: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let threads = threads_from_env()?;
    match cli.command {
        Command::Datagen { config, seed, out, clips } => {
            let mut cfg = load_config(config.as_ref(), seed, None)?;
            if let Some(n) = clips {
                cfg.dataset.clips = n;
            }
            let m = commands::datagen(&cfg, cfg.seed, &out, threads)?;
            let events: usize = m.clips.iter().map(|e| e.event_count).sum();
            println!("wrote {} clips ({events} events) to {}", m.clips.len(), out.display());
        }
        Command::Train { config, data, out, seed, steps, resume, allow_mismatch } => {
            let cfg = load_config(config.as_ref(), seed, steps)?;
            let cfg = match (&resume, &config) {
                // A resumed run takes its settings from the checkpoint.
                (Some(path), None) => {
                    let mut stored = hydra_cli::checkpoint::Checkpoint::load(path)?.config()?;
                    if let Some(s) = steps {
                        stored.train.steps = s;
                    }
                    if let Some(s) = seed {
                        stored.seed = s;
                    }
                    stored
                }
                _ => cfg,
            };
            let ck = commands::train(&cfg, &TrainOptions { data, out: out.clone(), resume, allow_mismatch, progress: true })?;
            println!("trained to step {}; final checkpoint in {}", ck.header.step, out.display());
        }
        Command::Sample { checkpoint, data, clip, n_ctx, steps, seed, out, allow_mismatch } => {
            let s = commands::sample(&SampleOptions { checkpoint, data, clip, n_ctx, steps, seed, out: out.clone(), allow_mismatch })?;
            println!(
                "predicted {} frames after {} context frames; outputs in {}",
                s.prediction.shape()[1],
                s.crop.n_ctx,
                out.display()
            );
        }
        Command::Eval { checkpoint, data, out, seed, allow_mismatch } => {
            let o = commands::eval(&EvalOptions { checkpoint, data, out: Some(out.clone()), seed, allow_mismatch, threads })?;
            for (m, s) in &o.summary.metrics {
                println!("{m}\t{:.6}\t± {:.6} (bootstrap)\tn={}", s.mean, s.bootstrap_std, s.count);
            }
            println!("report in {}", out.display());
        }
        Command::Ablate { suite, config, train_data, test_data, out, seed, steps } => {
            let cfg = load_config(config.as_ref(), seed, steps)?;
            let report = commands::ablate(suite, &cfg, &AblateOptions { train_data, test_data, out, threads, progress: true })?;
            print!("{}", report.to_text());
            if report.failures() > 0 {
                bail!("{} of {} ablation cells failed", report.failures(), report.rows.len());
            }
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
