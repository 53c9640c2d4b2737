//! Relating memory tokens and retrievals to subject visibility.
//!
//! A memory token is "empty" for an example when none of the subjects that
//! re-enter during the target is visible in any of the token's source
//! frames.

use std::ops::Range;

use hydra_core::codec::TEMPORAL_STRIDE;
use hydra_core::eval::StepSelections;
use hydra_core::model::{fov_overlap_select, provenance, MemoryTokens, ModelConfig};
use hydra_core::sim::{CameraPoseSeq, Crop, RenderedClip};
use hydra_core::{Result, Tensor};

/// Indices of subject tracks with an entry frame inside the target.
pub fn reentering_subjects(clip: &RenderedClip, crop: Crop) -> Vec<usize> {
    let mut ids: Vec<usize> = clip
        .events
        .iter()
        .filter(|e| (crop.n_ctx..crop.end).contains(&e.entry_frame))
        .filter_map(|e| clip.subject_tracks.iter().position(|t| t.subject_id == e.subject_id))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn any_visible(clip: &RenderedClip, subjects: &[usize], frames: Range<usize>) -> bool {
    subjects
        .iter()
        .any(|&s| frames.clone().any(|f| clip.subject_tracks[s].visible[f]))
}

/// Pixel frames behind each memory token when the example keeps the last
/// `f_mem` of the context's latent frames.
pub fn token_frames(crop: Crop, f_mem: usize, cfg: &ModelConfig) -> Vec<Range<usize>> {
    let offset = crop.n_ctx / TEMPORAL_STRIDE - f_mem;
    provenance(f_mem, cfg.tokenizer_kernel[0], cfg.tokenizer_stride[0])
        .into_iter()
        .map(|p| {
            let first = offset + p[0];
            let last = offset + p[p.len() - 1];
            first * TEMPORAL_STRIDE..(last + 1) * TEMPORAL_STRIDE
        })
        .collect()
}

/// Per memory token, whether it shows none of the re-entering subjects.
pub fn empty_tokens(clip: &RenderedClip, crop: Crop, f_mem: usize, cfg: &ModelConfig) -> Vec<bool> {
    let subjects = reentering_subjects(clip, crop);
    token_frames(crop, f_mem, cfg)
        .into_iter()
        .map(|r| !any_visible(clip, &subjects, r))
        .collect()
}

/// Whether any logged retrieval picked an empty token.
pub fn selected_empty(selections: &[StepSelections], empty: &[bool]) -> bool {
    selections
        .iter()
        .flatten()
        .flatten()
        .flatten()
        .any(|&j| empty.get(j).copied().unwrap_or(false))
}

/// Context latent frames kept by `context_limit`.
pub fn kept_memory_frames(crop: Crop, context_limit: Option<usize>) -> usize {
    let f = crop.n_ctx / TEMPORAL_STRIDE;
    context_limit.map_or(f, |l| l.min(f))
}

/// True when every subject re-entering in the target is invisible in the
/// last `limit` latent frames of context but visible somewhere before them.
pub fn evidence_outside_window(clip: &RenderedClip, crop: Crop, limit: usize) -> bool {
    let subjects = reentering_subjects(clip, crop);
    let cut = crop.n_ctx.saturating_sub(limit * TEMPORAL_STRIDE);
    !subjects.is_empty()
        && cut > 0
        && subjects.iter().all(|&s| {
            let vis = &clip.subject_tracks[s].visible;
            !vis[cut..crop.n_ctx].iter().any(|&v| v) && vis[..cut].iter().any(|&v| v)
        })
}

/// FOV-overlap selections per target latent frame, computed from geometry
/// alone (no network).
pub fn fov_selections(clip: &RenderedClip, crop: Crop, cfg: &ModelConfig) -> Result<Vec<Vec<usize>>> {
    let poses = CameraPoseSeq(clip.poses.0[..crop.end].to_vec()).downsample(TEMPORAL_STRIDE)?.0;
    let f_mem = crop.n_ctx / TEMPORAL_STRIDE;
    let prov = provenance(f_mem, cfg.tokenizer_kernel[0], cfg.tokenizer_stride[0]);
    let tokens = MemoryTokens {
        values: Tensor::zeros(&[1, prov.len(), 1, 1]),
        poses: prov.iter().map(|p| p.iter().map(|&l| poses[l]).collect()).collect(),
        provenance: prov,
    };
    let (w, h) = clip.window_extent();
    poses[f_mem..]
        .iter()
        .map(|p| fov_overlap_select(p, (w as f64, h as f64), &tokens, cfg.retrieved_tokens))
        .collect()
}

/// True when, for some target latent frame showing a re-entering subject,
/// FOV-overlap retrieval picks only empty tokens although a non-empty token
/// exists: the nearest-pose memory misses the subject.
pub fn fov_misses_subject(clip: &RenderedClip, crop: Crop, cfg: &ModelConfig) -> Result<bool> {
    let f_mem = crop.n_ctx / TEMPORAL_STRIDE;
    let empty = empty_tokens(clip, crop, f_mem, cfg);
    if empty.iter().all(|&e| e) {
        return Ok(false);
    }
    let subjects = reentering_subjects(clip, crop);
    Ok(fov_selections(clip, crop, cfg)?.iter().enumerate().any(|(i, sel)| {
        let start = crop.n_ctx + i * TEMPORAL_STRIDE;
        any_visible(clip, &subjects, start..start + TEMPORAL_STRIDE) && sel.iter().all(|&j| empty[j])
    }))
}
