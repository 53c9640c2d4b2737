//! Generating, writing and loading clip datasets.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use hydra_core::io::{self, Manifest, DATASET_VERSION};
use hydra_core::rng;
use hydra_core::sim::{generate_scenario, render, RenderedClip};

use crate::config::RunConfig;
use crate::parallel::par_map;

/// Copy of the generating config written next to the manifest.
pub const DATASET_CONFIG_FILE: &str = "dataset.toml";

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub clips: Vec<(String, RenderedClip)>,
}

impl Dataset {
    pub fn seeds(&self) -> Vec<u64> {
        self.manifest.clips.iter().map(|e| e.seed).collect()
    }
}

/// Renders the clip of candidate `index` under `master_seed`.
pub fn render_candidate(cfg: &RunConfig, master_seed: u64, index: u64) -> Result<RenderedClip> {
    let scenario = generate_scenario(rng::derive(master_seed, index), &cfg.sim)?;
    Ok(render(&scenario, cfg.sim.num_frames)?)
}

/// First `count` candidates (in index order) that carry at least one
/// exit–entry event and satisfy `accept`. Candidates are rendered in
/// parallel batches; the result does not depend on `threads`.
pub fn generate_clips(
    cfg: &RunConfig,
    master_seed: u64,
    count: usize,
    threads: usize,
    accept: impl Fn(&RenderedClip) -> bool + Sync,
) -> Result<Vec<RenderedClip>> {
    let limit = (count * cfg.dataset.max_attempts_per_clip.max(1)) as u64;
    let chunk = (threads.max(1) * 4) as u64;
    let mut kept = Vec::with_capacity(count);
    let mut next = 0u64;
    while kept.len() < count {
        if next >= limit {
            bail!("only {} of {count} clips accepted after {limit} candidates", kept.len());
        }
        let n = chunk.min(limit - next);
        let batch = par_map(n as usize, threads, |i| -> Result<Option<RenderedClip>> {
            let clip = render_candidate(cfg, master_seed, next + i as u64)?;
            Ok((!clip.events.is_empty() && accept(&clip)).then_some(clip))
        });
        for c in batch {
            if let Some(c) = c? {
                if kept.len() < count {
                    kept.push(c);
                }
            }
        }
        next += n;
    }
    Ok(kept)
}

pub fn write_dataset(dir: &Path, cfg: &RunConfig, clips: &[RenderedClip]) -> Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let hash = cfg.data_hash();
    let entries = clips
        .iter()
        .enumerate()
        .map(|(i, c)| io::write_clip(dir, &io::clip_id(i), c, &hash))
        .collect::<hydra_core::Result<Vec<_>>>()?;
    let manifest = Manifest {
        format_version: DATASET_VERSION,
        config_hash: hash,
        clips: entries,
    };
    io::write_manifest(dir, &manifest)?;
    let path = dir.join(DATASET_CONFIG_FILE);
    fs::write(&path, cfg.to_text()).with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = io::read_manifest(dir).with_context(|| format!("dataset {}", dir.display()))?;
    let mut clips = Vec::with_capacity(manifest.clips.len());
    for e in &manifest.clips {
        let (clip, meta) = io::read_clip(dir, &e.id)?;
        ensure!(
            meta.config_hash == manifest.config_hash,
            "clip {} was generated under a different config than its manifest",
            e.id
        );
        clips.push((e.id.clone(), clip));
    }
    Ok(Dataset { manifest, clips })
}

/// Refuses a dataset generated under different data settings unless
/// `allow_mismatch` is set.
pub fn check_data_hash(expected: &str, found: &str, what: &str, allow_mismatch: bool) -> Result<()> {
    if expected != found && !allow_mismatch {
        bail!("{what}: data hash {found} does not match {expected} (pass --allow-mismatch to override)");
    }
    Ok(())
}
