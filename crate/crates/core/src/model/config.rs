use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Top-K memory tokens by query/key affinity.
    DynamicAffinity,
    /// Top-K memory tokens by camera-window overlap.
    FovOverlap,
    /// No tokenizer: context latents concatenated with target tokens under
    /// full attention.
    DenseBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Token width; heads split it evenly.
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    /// FFN hidden width as a multiple of `width`.
    pub ffn_mult: usize,
    /// Memory tokenizer kernel `(kt, kh, kw)` over latent frames and cells.
    pub tokenizer_kernel: [usize; 3],
    pub tokenizer_stride: [usize; 3],
    /// Number of memory token steps retrieved per target frame.
    pub retrieved_tokens: usize,
    /// Local temporal window length in latent frames.
    pub local_window: usize,
    pub retrieval: RetrievalMode,
    /// Rows of the learned memory-age embedding.
    pub max_memory_steps: usize,
    /// Rows of the learned target-frame embedding.
    pub max_target_frames: usize,
    /// Camera translations enter the encoder as `(t − pose_offset)·pose_scale`.
    pub pose_offset: f64,
    pub pose_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 48,
            heads: 2,
            blocks: 2,
            ffn_mult: 4,
            tokenizer_kernel: [2, 4, 4],
            tokenizer_stride: [2, 4, 4],
            retrieved_tokens: 10,
            local_window: 5,
            retrieval: RetrievalMode::DynamicAffinity,
            max_memory_steps: 32,
            max_target_frames: 16,
            pose_offset: 32.0,
            pose_scale: 1.0 / 16.0,
        }
    }
}

/// Shape of one latent video: channels and spatial grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} must split evenly into {} heads", self.width, self.heads));
        }
        if self.blocks == 0 || self.ffn_mult == 0 {
            return bad("blocks and ffn_mult must be positive".into());
        }
        if self.retrieved_tokens == 0 {
            return bad("retrieved token count must be at least 1".into());
        }
        if self.local_window == 0 {
            return bad("local window must be at least 1".into());
        }
        if self.tokenizer_kernel.contains(&0) || self.tokenizer_stride.contains(&0) {
            return bad("tokenizer kernel and stride must be positive".into());
        }
        if self.max_memory_steps == 0 || self.max_target_frames == 0 {
            return bad("embedding tables need at least one row".into());
        }
        Ok(())
    }

    /// Memory token grid `(h, w)` for a latent grid; it must divide the grid
    /// so query pooling is exact.
    pub fn token_grid(&self, dims: &LatentDims) -> Result<(usize, usize)> {
        let [_, kh, kw] = self.tokenizer_kernel;
        let [_, sh, sw] = self.tokenizer_stride;
        if dims.height < kh || dims.width < kw {
            return Err(Error::Config(format!(
                "tokenizer kernel {kh}×{kw} exceeds latent grid {}×{}",
                dims.height, dims.width
            )));
        }
        let h = (dims.height - kh) / sh + 1;
        let w = (dims.width - kw) / sw + 1;
        if dims.height % h != 0 || dims.width % w != 0 {
            return Err(Error::Config(format!(
                "token grid {h}×{w} does not divide latent grid {}×{}",
                dims.height, dims.width
            )));
        }
        Ok((h, w))
    }
}
