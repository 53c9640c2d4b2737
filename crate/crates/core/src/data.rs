//! Turning rendered clips into model inputs and predictions back into pixels.

use serde::{Deserialize, Serialize};

use crate::codec::{Codec, TEMPORAL_STRIDE};
use crate::error::{Error, Result};
use crate::model::Conditioning;
use crate::sim::{event_crop, CameraPoseSeq, Crop, RenderedClip};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Predicted frames per example (multiple of the codec's temporal stride).
    pub target_frames: usize,
    /// Minimum context frames before the target.
    pub min_context_frames: usize,
    /// Keep only the most recent latent context frames, if set.
    pub context_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            target_frames: 8,
            min_context_frames: 8,
            context_limit: None,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_frames == 0 || self.target_frames % TEMPORAL_STRIDE != 0 {
            return Err(Error::Config(format!(
                "target frames {} must be a positive multiple of {TEMPORAL_STRIDE}",
                self.target_frames
            )));
        }
        if self.min_context_frames < TEMPORAL_STRIDE {
            return Err(Error::Config("context must span at least one latent frame".into()));
        }
        if self.context_limit == Some(0) {
            return Err(Error::Config("context limit must be at least one latent frame".into()));
        }
        Ok(())
    }

    pub fn crop(&self, clip: &RenderedClip) -> Option<Crop> {
        event_crop(clip, self.target_frames, self.min_context_frames, TEMPORAL_STRIDE)
    }
}

/// Pixels in `[0, 1]` map to latents in `[-1, 1]`.
pub fn to_model_range(x: &Tensor) -> Tensor {
    x.map(|v| 2.0 * v - 1.0)
}

pub fn from_model_range(x: &Tensor) -> Tensor {
    x.map(|v| (v + 1.0) / 2.0)
}

/// One training or evaluation instance.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    /// Clean target latents `z0`.
    pub target: Tensor,
    pub cond: Conditioning,
    pub crop: Crop,
}

/// Encodes context `[0, n_ctx)` as memory and `[n_ctx, end)` as target.
pub fn prepare_example(id: &str, clip: &RenderedClip, crop: Crop, codec: &Codec, context_limit: Option<usize>) -> Result<Example> {
    let Crop { n_ctx, end } = crop;
    if n_ctx == 0 || end <= n_ctx || end > clip.num_frames() {
        return Err(Error::Usage(format!("crop {crop:?} invalid for {} frames", clip.num_frames())));
    }
    let ctx = clip.frames.narrow(1, 0, n_ctx)?;
    let tgt = clip.frames.narrow(1, n_ctx, end - n_ctx)?;
    let mut memory = to_model_range(&codec.encode(&ctx)?.values);
    let target = to_model_range(&codec.encode(&tgt)?.values);
    let mut poses = CameraPoseSeq(clip.poses.0[..end].to_vec()).downsample(TEMPORAL_STRIDE)?.0;
    let f_mem = memory.shape()[1];
    if let Some(limit) = context_limit.filter(|&l| l < f_mem) {
        memory = memory.narrow(1, f_mem - limit, limit)?;
        poses.drain(..f_mem - limit);
    }
    let (w, h) = clip.window_extent();
    Ok(Example {
        id: id.to_string(),
        target,
        cond: Conditioning {
            memory: Some(memory),
            poses,
            view: (w as f64, h as f64),
        },
        crop,
    })
}

/// Examples for every clip that admits an event crop, in input order.
pub fn build_examples<'a>(
    clips: impl IntoIterator<Item = (&'a str, &'a RenderedClip)>,
    cfg: &DataConfig,
    codec: &Codec,
) -> Result<Vec<Example>> {
    cfg.validate()?;
    clips
        .into_iter()
        .filter_map(|(id, c)| cfg.crop(c).map(|crop| prepare_example(id, c, crop, codec, cfg.context_limit)))
        .collect()
}

/// Latent prediction to pixels, clipped to `[0, 1]`.
pub fn decode_prediction(codec: &Codec, latent: &Tensor) -> Result<Tensor> {
    Ok(codec.decode_values(&from_model_range(latent))?.map(|v| v.clamp(0.0, 1.0)))
}
