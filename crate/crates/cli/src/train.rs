//! The training loop shared by `train` and `ablate`.

use std::time::Instant;

use anyhow::{ensure, Result};
use hydra_core::data::Example;
use hydra_core::model::{LatentDims, Model};
use hydra_core::rng;
use hydra_core::trainer::{batch_plan, train_step, Adam, StepStats};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

pub fn init_seed(master: u64) -> u64 {
    rng::derive(master, INIT_STREAM)
}

pub fn batch_seed(master: u64) -> u64 {
    rng::derive(master, BATCH_STREAM)
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: u64,
    pub loss: f64,
    /// Mean loss over the steps since the previous line.
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

pub fn latent_dims(examples: &[Example]) -> Result<LatentDims> {
    let first = examples.first().ok_or_else(|| anyhow::anyhow!("no training examples"))?;
    let s = first.target.shape();
    let dims = LatentDims {
        channels: s[0],
        height: s[2],
        width: s[3],
    };
    ensure!(
        examples.iter().all(|e| e.target.shape() == s),
        "training examples have differing target shapes"
    );
    Ok(dims)
}

pub fn fresh_model(cfg: &RunConfig, dims: LatentDims) -> Result<(Model, Adam)> {
    let model = Model::new(cfg.model.clone(), dims, init_seed(cfg.seed))?;
    let adam = Adam::new(cfg.optim.clone(), &model.params);
    Ok((model, adam))
}

/// Trains from `adam.step` up to `cfg.train.steps`. `on_step` sees every
/// step's stats plus a log line when one is due; errors abort the run.
pub fn run(
    cfg: &RunConfig,
    model: &mut Model,
    adam: &mut Adam,
    examples: &[Example],
    mut on_step: impl FnMut(&StepStats, Option<&LogLine>, &Model, &Adam) -> Result<()>,
) -> Result<()> {
    ensure!(!examples.is_empty(), "no training examples");
    let master = batch_seed(cfg.seed);
    let start = Instant::now();
    let mut window = Vec::new();
    while adam.step < cfg.train.steps {
        let (idx, noise) = batch_plan(master, adam.step, examples.len(), cfg.train.batch_size);
        let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
        let stats = train_step(model, adam, &batch, noise)?;
        window.push(stats.loss);
        let line = ((stats.step + 1) % cfg.train.log_interval == 0).then(|| {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            LogLine {
                step: stats.step,
                loss: stats.loss,
                mean_loss: mean,
                lr: stats.lr,
                wall_ms: start.elapsed().as_millis() as u64,
            }
        });
        on_step(&stats, line.as_ref(), model, adam)?;
    }
    Ok(())
}
