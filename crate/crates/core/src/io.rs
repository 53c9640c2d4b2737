//! On-disk formats: raw tensor files and the clip dataset layout.
//!
//! Tensor file (little-endian):
//!
//! | offset | size    | field                                   |
//! |--------|---------|-----------------------------------------|
//! | 0      | 8       | magic `HYTENSOR`                        |
//! | 8      | 4       | format version (u32) = 1                |
//! | 12     | 1       | dtype code (u8), 1 = f64                |
//! | 13     | 1       | ndim (u8)                               |
//! | 14     | 2       | reserved, zero                          |
//! | 16     | 8·ndim  | extents (u64 each)                      |
//! | …      | 8·numel | values (f64, row-major)                 |
//!
//! A dataset directory holds `manifest.json` plus, per clip, `<id>.tensor`
//! (frames `3×F×H×W`) and `<id>.json` (poses, windows, subject tracks,
//! events, caption, seed, config hash).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{CameraPoseSeq, Event, Rect, RenderedClip, SubjectTrack};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"HYTENSOR";
pub const TENSOR_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (t.ndim() + t.numel()));
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(DTYPE_F64);
    out.push(t.ndim() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: &str| Error::Format(format!("tensor file: {m}"));
    if bytes.len() < 16 || &bytes[..8] != TENSOR_MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != TENSOR_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    if bytes[12] != DTYPE_F64 {
        return Err(bad(&format!("unsupported dtype code {}", bytes[12])));
    }
    let ndim = bytes[13] as usize;
    let header = 16 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = bytes[16..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if bytes.len() != header + 8 * n {
        return Err(bad(&format!("expected {} value bytes, found {}", 8 * n, bytes.len() - header)));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, tensor_to_bytes(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    tensor_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Sidecar metadata of one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMeta {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub scene_id: usize,
    pub track_id: usize,
    pub caption: String,
    pub poses: CameraPoseSeq,
    pub windows: Vec<Rect>,
    pub subject_tracks: Vec<SubjectTrack>,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub event_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub clips: Vec<ManifestEntry>,
}

pub fn clip_id(index: usize) -> String {
    format!("clip_{index:05}")
}

pub fn write_clip(dir: &Path, id: &str, clip: &RenderedClip, config_hash: &str) -> Result<ManifestEntry> {
    write_tensor(&dir.join(format!("{id}.tensor")), &clip.frames)?;
    let meta = ClipMeta {
        format_version: DATASET_VERSION,
        config_hash: config_hash.to_string(),
        seed: clip.seed,
        scene_id: clip.scene_id,
        track_id: clip.track_id,
        caption: clip.caption.clone(),
        poses: clip.poses.clone(),
        windows: clip.windows.clone(),
        subject_tracks: clip.subject_tracks.clone(),
        events: clip.events.clone(),
    };
    write_json(&dir.join(format!("{id}.json")), &meta)?;
    Ok(ManifestEntry {
        id: id.to_string(),
        seed: clip.seed,
        event_count: clip.events.len(),
    })
}

pub fn read_clip(dir: &Path, id: &str) -> Result<(RenderedClip, ClipMeta)> {
    let frames = read_tensor(&dir.join(format!("{id}.tensor")))?;
    let meta: ClipMeta = read_json(&dir.join(format!("{id}.json")))?;
    if frames.ndim() != 4 || frames.shape()[1] != meta.poses.len() {
        return Err(Error::Format(format!(
            "clip {id}: frames {:?} disagree with {} poses",
            frames.shape(),
            meta.poses.len()
        )));
    }
    let clip = RenderedClip {
        seed: meta.seed,
        scene_id: meta.scene_id,
        track_id: meta.track_id,
        frames,
        poses: meta.poses.clone(),
        windows: meta.windows.clone(),
        subject_tracks: meta.subject_tracks.clone(),
        events: meta.events.clone(),
        caption: meta.caption.clone(),
    };
    Ok((clip, meta))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if m.format_version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", m.format_version)));
    }
    Ok(m)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

/// Loads every clip listed in the manifest.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<RenderedClip>)> {
    let manifest = read_manifest(dir)?;
    let clips = manifest
        .clips
        .iter()
        .map(|e| read_clip(dir, &e.id).map(|(c, _)| c))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, clips))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn tensor_bytes_roundtrip() {
        let t = Tensor::randn(&[2, 3, 4], 1.0, &mut rng::seeded(1));
        let bytes = tensor_to_bytes(&t);
        assert_eq!(&bytes[..8], b"HYTENSOR");
        assert_eq!(bytes.len(), 16 + 8 * 3 + 8 * 24);
        assert_eq!(tensor_from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn truncated_tensor_is_format_error() {
        let bytes = tensor_to_bytes(&Tensor::zeros(&[2, 2]));
        assert!(matches!(tensor_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(tensor_from_bytes(b"nonsense"), Err(Error::Format(_))));
    }
}
