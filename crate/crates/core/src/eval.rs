//! Sampling predictions for held-out clips and scoring them.

use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::data::{decode_prediction, DataConfig, Example};
use crate::error::{Error, Result};
use crate::metrics::{clip_boxes, score_clip, ClipEval, ClipScores, FeatureExtractor, Report};
use crate::model::Model;
use crate::rng;
use crate::sim::RenderedClip;
use crate::tensor::Tensor;
use crate::trainer::euler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sample_steps: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sample_steps: 10,
            seed: 1234,
        }
    }
}

/// Retrieved memory steps at one sampler step: per block, per target frame.
pub type StepSelections = Vec<Vec<Vec<usize>>>;

/// Samples target latents for `ex`, logging retrievals at every step.
pub fn predict(model: &Model, ex: &Example, steps: usize, seed: u64) -> Result<(Tensor, Vec<StepSelections>)> {
    let mut r = rng::seeded(seed);
    let z1 = Tensor::randn(ex.target.shape(), 1.0, &mut r);
    let mut log = Vec::with_capacity(steps);
    let z = euler(z1, steps, |z, t| {
        let (u, sel) = model.velocity(z, t, &ex.cond)?;
        log.push(sel);
        Ok(u)
    })?;
    Ok((z, log))
}

/// Scores a pixel prediction of the target frames of `ex`.
pub fn score_prediction(clip: &RenderedClip, ex: &Example, pred: &Tensor, extractor: &dyn FeatureExtractor) -> Result<ClipScores> {
    let (n_ctx, end) = (ex.crop.n_ctx, ex.crop.end);
    let gt = clip.frames.narrow(1, n_ctx, end - n_ctx)?;
    let ctx = clip.frames.narrow(1, 0, n_ctx)?;
    let target_boxes = clip_boxes(clip, n_ctx, end - n_ctx);
    let ctx_boxes = clip_boxes(clip, 0, n_ctx);
    score_clip(
        &ClipEval {
            clip: ex.id.clone(),
            pred,
            gt: &gt,
            target_boxes: &target_boxes,
            ctx: &ctx,
            ctx_boxes: &ctx_boxes,
        },
        extractor,
    )
}

pub struct EvalRun {
    pub report: Report,
    /// Retrieval log per clip, per sampler step.
    pub selections: Vec<Vec<StepSelections>>,
    pub predictions: Vec<Tensor>,
}

/// Predicts and scores every clip that admits an event crop. Each clip's
/// noise seed is derived from `cfg.seed` and its position, so results do
/// not depend on `threads`.
pub fn evaluate_run(
    model: &Model,
    clips: &[(String, RenderedClip)],
    data: &DataConfig,
    cfg: &EvalConfig,
    codec: &Codec,
    extractor: &dyn FeatureExtractor,
    threads: usize,
) -> Result<EvalRun> {
    data.validate()?;
    let one = |i: usize| -> Result<Option<(ClipScores, Vec<StepSelections>, Tensor)>> {
        let (id, clip) = &clips[i];
        let Some(crop) = data.crop(clip) else {
            return Ok(None);
        };
        let ex = crate::data::prepare_example(id, clip, crop, codec, data.context_limit)?;
        let (latent, log) = predict(model, &ex, cfg.sample_steps, rng::derive(cfg.seed, i as u64))?;
        let video = decode_prediction(codec, &latent)?;
        Ok(Some((score_prediction(clip, &ex, &video, extractor)?, log, video)))
    };
    let threads = threads.clamp(1, clips.len().max(1));
    let results: Vec<Result<Option<_>>> = if threads == 1 {
        (0..clips.len()).map(one).collect()
    } else {
        let mut slots: Vec<Option<Result<Option<_>>>> = (0..clips.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let one = &one;
            let handles: Vec<_> = (0..threads)
                .map(|w| s.spawn(move || (w..clips.len()).step_by(threads).map(|i| (i, one(i))).collect::<Vec<_>>()))
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every clip evaluated")).collect()
    };
    let mut rows = Vec::new();
    let mut selections = Vec::new();
    let mut predictions = Vec::new();
    for r in results {
        if let Some((scores, log, video)) = r? {
            rows.push(scores);
            selections.push(log);
            predictions.push(video);
        }
    }
    if rows.is_empty() {
        return Err(Error::Usage("no evaluable clips".into()));
    }
    Ok(EvalRun {
        report: Report {
            extractor: extractor.id().to_string(),
            rows,
        },
        selections,
        predictions,
    })
}
