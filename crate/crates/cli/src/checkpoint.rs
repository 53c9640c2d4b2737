//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! | field                  | encoding                                      |
//! |------------------------|-----------------------------------------------|
//! | magic                  | 8 bytes `HYDRACKP`                            |
//! | format version         | u32                                           |
//! | header length          | u32, then that many bytes of JSON [`Header`]  |
//! | parameter count        | u32                                           |
//! | per parameter          | u32 name length, UTF-8 name, tensor record    |
//! | optimizer flag         | u8, 1 when Adam moments follow                |
//! | per parameter (if set) | tensor record of `m`, tensor record of `v`    |
//!
//! A tensor record is the raw tensor file format of `hydra_core::io`
//! prefixed by its byte length (u64).

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use hydra_core::io::{tensor_from_bytes, tensor_to_bytes};
use hydra_core::model::{LatentDims, Model};
use hydra_core::trainer::Adam;
use hydra_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MAGIC: &[u8; 8] = b"HYDRACKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    /// Canonical text of the run config.
    pub config: String,
    pub config_hash: String,
    /// Hash of the dataset the model was trained on.
    pub data_hash: String,
    /// Completed optimizer steps.
    pub step: u64,
    pub dims: LatentDims,
    /// Simulation seeds of the training clips.
    pub train_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub model: Model,
    pub adam: Option<Adam>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.pos + n <= self.bytes.len(), "checkpoint truncated at byte {}", self.pos);
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let n = self.u64()? as usize;
        Ok(tensor_from_bytes(self.take(n)?)?)
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    let bytes = tensor_to_bytes(t);
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&bytes);
}

impl Checkpoint {
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.header.config)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let params = &self.model.params;
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_tensor(&mut out, t);
        }
        match &self.adam {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                for ((_, t), (m, v)) in params.iter().zip(adam.m.iter().zip(&adam.v)) {
                    put_tensor(&mut out, &Tensor::new(t.shape().to_vec(), m.clone()).expect("moment shape"));
                    put_tensor(&mut out, &Tensor::new(t.shape().to_vec(), v.clone()).expect("moment shape"));
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            bail!("not a checkpoint (bad magic)");
        }
        let version = r.u32()?;
        ensure!(version == FORMAT_VERSION, "unsupported checkpoint version {version}");
        let n = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(n)?).context("checkpoint header")?;
        let config = RunConfig::parse(&header.config).context("checkpoint config")?;
        ensure!(config.hash() == header.config_hash, "checkpoint config hash does not match its config text");

        // Parameters must match the layout the config builds, name by name.
        let mut model = Model::new(config.model.clone(), header.dims, 0)?;
        let count = r.u32()? as usize;
        ensure!(
            count == model.params.len(),
            "checkpoint holds {count} parameters, config expects {}",
            model.params.len()
        );
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        for expected in &names {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)?;
            ensure!(name == expected, "parameter {name} found where {expected} was expected");
            model.params.set(name, r.tensor()?).with_context(|| format!("parameter {name}"))?;
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let mut adam = Adam::new(config.optim.clone(), &model.params);
                adam.step = header.step;
                for (i, name) in names.iter().enumerate() {
                    for buf in [&mut adam.m[i], &mut adam.v[i]] {
                        let t = r.tensor()?;
                        ensure!(t.numel() == buf.len(), "optimizer moment of {name} has {} values", t.numel());
                        *buf = t.data().to_vec();
                    }
                }
                Some(adam)
            }
            f => bail!("bad optimizer flag {f}"),
        };
        ensure!(r.pos == bytes.len(), "{} trailing bytes in checkpoint", bytes.len() - r.pos);
        Ok(Self { header, model, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }
}

