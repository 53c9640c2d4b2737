//! Camera-conditioned DiT trunk over latent tokens.
//!
//! Tokens are rows of a `[N, D]` matrix ordered by (frame, y, x). Each block
//! applies timestep-modulated attention, a linear projector and an FFN, all
//! residual. In the retrieval modes, target frame `i` attends to the
//! memory tokens selected for it plus the target frames of its local window;
//! the dense baseline runs full attention over context and target tokens.

use rand::Rng as _;

use super::config::{LatentDims, ModelConfig, RetrievalMode};
use super::retrieval::{self, MemoryKv, MemoryTokens};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamStore};
use crate::rng;
use crate::sim::{Pose, POSE_DIM};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-6;
const EMBED_STD: f64 = 0.1;
const TIME_SCALE: f64 = 1000.0;

/// Everything the network conditions on besides the noisy target.
#[derive(Clone, Debug)]
pub struct Conditioning {
    /// Context latents `C×f_mem×H×W`, if any.
    pub memory: Option<Tensor>,
    /// One pose per latent frame: memory frames first, then target frames.
    pub poses: Vec<Pose>,
    /// Camera window extent in pose units, used by FOV retrieval.
    pub view: (f64, f64),
}

impl Conditioning {
    pub fn memory_frames(&self) -> usize {
        self.memory.as_ref().map_or(0, |m| m.shape()[1])
    }
}

pub struct ForwardOutput {
    /// Velocity prediction, same shape as the noisy latent.
    pub velocity: Var,
    /// Retrieved memory token steps per block, per target frame.
    pub selections: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: LatentDims,
    pub params: ParamStore,
    token_grid: (usize, usize),
}

/// Sinusoidal features of `TIME_SCALE·t`, width `dim`.
pub fn timestep_features(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = TIME_SCALE * t * freq;
        v[k] = a.sin();
        v[half + k] = a.cos();
    }
    Tensor::new(vec![1, dim], v).expect("feature width")
}

/// `n×12` camera condition with translations normalized.
pub fn camera_features(poses: &[Pose], offset: f64, scale: f64) -> Result<Tensor> {
    if poses.is_empty() {
        return Err(Error::dim("camera features", "no poses"));
    }
    let data = poses
        .iter()
        .flat_map(|p| {
            let mut f = p.flatten();
            for v in &mut f[9..11] {
                *v = (*v - offset) * scale;
            }
            f[11] *= scale;
            f
        })
        .collect();
    Tensor::new(vec![poses.len(), POSE_DIM], data)
}

/// Adds the per-frame camera embedding `cam` (`[f, D]`) to every token of
/// that frame in `h_in` (`[f·frame_tokens, D]`).
pub fn inject_camera(g: &mut Graph, h_in: Var, cam: Var, frame_tokens: usize) -> Result<Var> {
    let (rows, f) = (g.shape(h_in)[0], g.shape(cam)[0]);
    if rows != f * frame_tokens {
        return Err(Error::dim(
            "camera injection",
            format!("{f} camera rows for {rows} tokens of {frame_tokens} per frame"),
        ));
    }
    let per_token = g.repeat_rows(cam, frame_tokens)?;
    g.add(h_in, per_token)
}

/// `LN(x)·(1 + scale) + shift`.
fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS)?;
    let s = g.add_scalar(scale, 1.0);
    let y = g.mul_row(n, s)?;
    g.add_row(y, shift)
}

/// `[C, f, H, W]` latent to `[f·H·W, C]` token rows.
fn to_rows(g: &mut Graph, z: Var) -> Result<Var> {
    let s = g.shape(z).to_vec();
    let p = g.permute(z, &[1, 2, 3, 0])?;
    g.reshape(p, &[s[1] * s[2] * s[3], s[0]])
}

/// Stacks `x` (`[r, D]`) `n` times along rows.
fn tile(g: &mut Graph, x: Var, n: usize) -> Result<Var> {
    if n == 1 {
        return Ok(x);
    }
    g.concat(&vec![x; n], 0)
}

struct Binder<'a> {
    params: &'a ParamStore,
    bound: &'a Bound,
}

impl Binder<'_> {
    fn p(&self, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        self.bound.var(id)
    }
}

impl Model {
    pub fn new(config: ModelConfig, dims: LatentDims, seed: u64) -> Result<Model> {
        config.validate()?;
        let token_grid = config.token_grid(&dims)?;
        let (d, c) = (config.width, dims.channels);
        let hw = dims.height * dims.width;
        let mut r = rng::seeded(seed);
        let mut ps = ParamStore::new();
        let mut normal = |ps: &mut ParamStore, name: &str, shape: &[usize], std: f64| -> Result<()> {
            ps.insert(name, Tensor::randn(shape, std, &mut r)).map(|_| ())
        };
        let zeros = |ps: &mut ParamStore, name: &str, shape: &[usize]| ps.insert(name, Tensor::zeros(shape)).map(|_| ());
        let ones = |ps: &mut ParamStore, name: &str, shape: &[usize]| ps.insert(name, Tensor::full(shape, 1.0)).map(|_| ());
        let fan = |n: usize| 1.0 / (n as f64).sqrt();

        normal(&mut ps, "patch.w", &[c, d], fan(c))?;
        zeros(&mut ps, "patch.b", &[d])?;
        normal(&mut ps, "pos.tgt", &[hw, d], EMBED_STD)?;
        normal(&mut ps, "tgt.time", &[config.max_target_frames, d], EMBED_STD)?;
        normal(&mut ps, "cam.w1", &[POSE_DIM, d], fan(POSE_DIM))?;
        zeros(&mut ps, "cam.b1", &[d])?;
        normal(&mut ps, "cam.w2", &[d, d], fan(d))?;
        zeros(&mut ps, "cam.b2", &[d])?;
        normal(&mut ps, "time.w1", &[d, d], fan(d))?;
        zeros(&mut ps, "time.b1", &[d])?;
        normal(&mut ps, "time.w2", &[d, d], fan(d))?;
        zeros(&mut ps, "time.b2", &[d])?;
        match config.retrieval {
            RetrievalMode::DenseBaseline => normal(&mut ps, "dense.ctx", &[d], EMBED_STD)?,
            _ => {
                let [kt, kh, kw] = config.tokenizer_kernel;
                normal(&mut ps, "mem.conv.w", &[d, c, kt, kh, kw], fan(c * kt * kh * kw))?;
                zeros(&mut ps, "mem.conv.b", &[d])?;
                normal(&mut ps, "mem.pos", &[token_grid.0 * token_grid.1, d], EMBED_STD)?;
                normal(&mut ps, "mem.time", &[config.max_memory_steps, d], EMBED_STD)?;
            }
        }
        let hidden = d * config.ffn_mult;
        for b in 0..config.blocks {
            let n = |s: &str| format!("blocks.{b}.{s}");
            zeros(&mut ps, &n("mod.w"), &[d, 6 * d])?;
            zeros(&mut ps, &n("mod.b"), &[6 * d])?;
            for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
                normal(&mut ps, &n(w), &[d, d], fan(d))?;
            }
            zeros(&mut ps, &n("attn.bo"), &[d])?;
            if config.retrieval != RetrievalMode::DenseBaseline {
                ones(&mut ps, &n("mem_norm.g"), &[d])?;
                zeros(&mut ps, &n("mem_norm.b"), &[d])?;
            }
            ones(&mut ps, &n("proj_norm.g"), &[d])?;
            zeros(&mut ps, &n("proj_norm.b"), &[d])?;
            zeros(&mut ps, &n("proj.w"), &[d, d])?;
            zeros(&mut ps, &n("proj.b"), &[d])?;
            normal(&mut ps, &n("ffn.w1"), &[d, hidden], fan(d))?;
            zeros(&mut ps, &n("ffn.b1"), &[hidden])?;
            normal(&mut ps, &n("ffn.w2"), &[hidden, d], fan(hidden))?;
            zeros(&mut ps, &n("ffn.b2"), &[d])?;
        }
        zeros(&mut ps, "final.mod.w", &[d, 2 * d])?;
        zeros(&mut ps, "final.mod.b", &[2 * d])?;
        zeros(&mut ps, "out.w", &[d, c])?;
        zeros(&mut ps, "out.b", &[c])?;
        Ok(Model {
            config,
            dims,
            params: ps,
            token_grid,
        })
    }

    pub fn token_grid(&self) -> (usize, usize) {
        self.token_grid
    }

    /// Adds Gaussian noise to every parameter, including zero-initialized ones.
    pub fn perturb(&mut self, std: f64, seed: u64) {
        let mut r = rng::seeded(seed);
        for t in self.params.tensors_mut() {
            for v in t.data_mut() {
                *v += std * r.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
    }

    /// `E_cam` applied to a pose list: `[n, D]`.
    pub fn encode_camera(&self, g: &mut Graph, bound: &Bound, poses: &[Pose]) -> Result<Var> {
        let b = Binder {
            params: &self.params,
            bound,
        };
        let feats = camera_features(poses, self.config.pose_offset, self.config.pose_scale)?;
        let c = g.constant(feats);
        let h = g.linear(c, b.p("cam.w1"), Some(b.p("cam.b1")))?;
        let h = g.gelu(h);
        g.linear(h, b.p("cam.w2"), Some(b.p("cam.b2")))
    }

    /// Memory latents to token rows `[f'·h·w, D]` with positional, age and
    /// camera embeddings, plus provenance.
    fn memory_rows(&self, g: &mut Graph, bound: &Bound, cond: &Conditioning) -> Result<Option<(Var, MemoryTokens)>> {
        let b = Binder {
            params: &self.params,
            bound,
        };
        let Some(mem) = &cond.memory else {
            return Ok(None);
        };
        let f_mem = mem.shape()[1];
        let [kt, _, _] = self.config.tokenizer_kernel;
        let stride = self.config.tokenizer_stride;
        if f_mem < kt {
            return Err(Error::Config(format!("{f_mem} memory frames shorter than tokenizer kernel {kt}")));
        }
        let z = g.constant(mem.clone());
        let m = g.conv3d(z, b.p("mem.conv.w"), stride)?;
        let (fp, h, w) = (g.shape(m)[1], g.shape(m)[2], g.shape(m)[3]);
        if (h, w) != self.token_grid {
            return Err(Error::Config(format!(
                "memory grid {h}×{w} differs from token grid {:?}",
                self.token_grid
            )));
        }
        let tokens = MemoryTokens {
            values: g.value(m).clone(),
            provenance: retrieval::provenance(f_mem, kt, stride[0]),
            poses: retrieval::provenance(f_mem, kt, stride[0])
                .iter()
                .map(|p| p.iter().map(|&i| cond.poses[i]).collect())
                .collect(),
        };
        let rows = to_rows(g, m)?;
        let rows = g.add_row(rows, b.p("mem.conv.b"))?;
        let pos = tile(g, b.p("mem.pos"), fp)?;
        let rows = g.add(rows, pos)?;
        let max_age = self.config.max_memory_steps - 1;
        let ages: Vec<usize> = (0..fp).map(|j| (fp - 1 - j).min(max_age)).collect();
        let age = g.gather_rows(b.p("mem.time"), &ages)?;
        let age = g.repeat_rows(age, h * w)?;
        let rows = g.add(rows, age)?;
        let token_poses = (0..fp).map(|j| tokens.token_pose(j)).collect::<Result<Vec<_>>>()?;
        let cam = self.encode_camera(g, bound, &token_poses)?;
        let rows = inject_camera(g, rows, cam, h * w)?;
        Ok(Some((rows, tokens)))
    }

    /// Per-target-frame retrieval for one block.
    fn select(&self, g: &Graph, q: Var, mem_k: Option<Var>, tokens: &MemoryTokens, cond: &Conditioning, f: usize) -> Result<Vec<Vec<usize>>> {
        let k = self.config.retrieved_tokens;
        let (hl, wl) = (self.dims.height, self.dims.width);
        let d = self.config.width;
        match self.config.retrieval {
            RetrievalMode::DynamicAffinity => {
                let mk = mem_k.expect("memory keys present with tokens");
                let (h, w) = self.token_grid;
                // [f', h·w, D] -> [D, f', h, w]
                let keys = g
                    .value(mk)
                    .reshape(&[tokens.len(), h, w, d])?
                    .permute(&[3, 0, 1, 2])?;
                let qv = g.value(q);
                (0..f)
                    .map(|i| {
                        let qi = qv
                            .narrow(0, i * hl * wl, hl * wl)?
                            .reshape(&[hl, wl, d])?
                            .permute(&[2, 0, 1])?;
                        Ok(retrieval::topk_select(&retrieval::affinity(&qi, &keys)?, k))
                    })
                    .collect()
            }
            RetrievalMode::FovOverlap => {
                let f_mem = cond.memory_frames();
                (0..f)
                    .map(|i| retrieval::fov_overlap_select(&cond.poses[f_mem + i], cond.view, tokens, k))
                    .collect()
            }
            RetrievalMode::DenseBaseline => Ok(vec![Vec::new(); f]),
        }
    }

    /// Velocity prediction for noisy target latents `z_t` (`[C, f, H, W]`).
    pub fn forward(&self, g: &mut Graph, bound: &Bound, z_t: Var, t: f64, cond: &Conditioning) -> Result<ForwardOutput> {
        let b = Binder {
            params: &self.params,
            bound,
        };
        let cfg = &self.config;
        let zs = g.shape(z_t).to_vec();
        let &[c, f, hl, wl] = zs.as_slice() else {
            return Err(Error::dim("forward", format!("expected C×f×H×W latent, got {zs:?}")));
        };
        if (c, hl, wl) != (self.dims.channels, self.dims.height, self.dims.width) {
            return Err(Error::dim("forward", format!("latent {zs:?} does not match model dims {:?}", self.dims)));
        }
        if let Some(m) = &cond.memory {
            if m.ndim() != 4 || m.shape()[0] != c || m.shape()[2] != hl || m.shape()[3] != wl {
                return Err(Error::shapes("forward", m.shape(), &zs));
            }
        }
        let f_mem = cond.memory_frames();
        if cond.poses.len() != f_mem + f {
            return Err(Error::dim(
                "forward",
                format!("{} poses for {f_mem} memory and {f} target frames", cond.poses.len()),
            ));
        }
        if f > cfg.max_target_frames {
            return Err(Error::Config(format!("{f} target frames exceed {}", cfg.max_target_frames)));
        }
        let hw = hl * wl;
        let d = cfg.width;

        let cam_all = self.encode_camera(g, bound, &cond.poses)?;
        let embed = |g: &mut Graph, z: Var, frames: usize| -> Result<Var> {
            let rows = to_rows(g, z)?;
            let x = g.linear(rows, b.p("patch.w"), Some(b.p("patch.b")))?;
            let pos = tile(g, b.p("pos.tgt"), frames)?;
            g.add(x, pos)
        };
        let mut x = embed(g, z_t, f)?;
        let frame_ids: Vec<usize> = (0..f).collect();
        let te = g.gather_rows(b.p("tgt.time"), &frame_ids)?;
        let te = g.repeat_rows(te, hw)?;
        x = g.add(x, te)?;
        let cam_tgt = g.narrow(cam_all, 0, f_mem, f)?;
        x = inject_camera(g, x, cam_tgt, hw)?;

        let tf = g.constant(timestep_features(t, d));
        let temb = g.linear(tf, b.p("time.w1"), Some(b.p("time.b1")))?;
        let temb = g.silu(temb);
        let temb = g.linear(temb, b.p("time.w2"), Some(b.p("time.b2")))?;
        let cond_t = g.silu(temb);

        let dense = cfg.retrieval == RetrievalMode::DenseBaseline;
        let mut memory = None;
        let mut ctx_rows = 0;
        if dense {
            if let Some(mem) = &cond.memory {
                let zm = g.constant(mem.clone());
                let ctx = embed(g, zm, f_mem)?;
                let ctx = g.add_row(ctx, b.p("dense.ctx"))?;
                let cam_ctx = g.narrow(cam_all, 0, 0, f_mem)?;
                let ctx = inject_camera(g, ctx, cam_ctx, hw)?;
                ctx_rows = f_mem * hw;
                x = g.concat(&[ctx, x], 0)?;
            }
        } else {
            memory = self.memory_rows(g, bound, cond)?;
        }

        let mut selections = Vec::with_capacity(cfg.blocks);
        for blk in 0..cfg.blocks {
            let n = |s: &str| b.p(&format!("blocks.{blk}.{s}"));
            let m = g.linear(cond_t, n("mod.w"), Some(n("mod.b")))?;
            let chunk = |g: &mut Graph, i: usize| g.narrow(m, 1, i * d, d);
            let (sh1, sc1, g1) = (chunk(g, 0)?, chunk(g, 1)?, chunk(g, 2)?);
            let (sh2, sc2, g2) = (chunk(g, 3)?, chunk(g, 4)?, chunk(g, 5)?);

            let h = modulate(g, x, sh1, sc1)?;
            let q = g.matmul(h, n("attn.wq"))?;
            let k = g.matmul(h, n("attn.wk"))?;
            let v = g.matmul(h, n("attn.wv"))?;
            let a = if dense {
                selections.push(vec![Vec::new(); f]);
                retrieval::multi_head(g, q, k, v, cfg.heads)?
            } else {
                let (kv, sel) = match &memory {
                    Some((rows, tokens)) => {
                        let mn = g.layer_norm_affine(*rows, n("mem_norm.g"), n("mem_norm.b"), LN_EPS)?;
                        let (th, tw) = self.token_grid;
                        let mk = g.matmul(mn, n("attn.wk"))?;
                        let mv = g.matmul(mn, n("attn.wv"))?;
                        let mk = g.reshape(mk, &[tokens.len(), th * tw, d])?;
                        let mv = g.reshape(mv, &[tokens.len(), th * tw, d])?;
                        let sel = self.select(g, q, Some(mk), tokens, cond, f)?;
                        (Some(MemoryKv { k: mk, v: mv }), sel)
                    }
                    None => (None, vec![Vec::new(); f]),
                };
                let a = retrieval::retrieval_attention(g, q, k, v, kv, &sel, hw, cfg.local_window, cfg.heads)?;
                selections.push(sel);
                a
            };
            let o = g.linear(a, n("attn.wo"), Some(n("attn.bo")))?;
            let o = g.mul_row(o, g1)?;
            x = g.add(x, o)?;

            let pn = g.layer_norm_affine(x, n("proj_norm.g"), n("proj_norm.b"), LN_EPS)?;
            let p = g.linear(pn, n("proj.w"), Some(n("proj.b")))?;
            x = g.add(x, p)?;

            let h2 = modulate(g, x, sh2, sc2)?;
            let f1 = g.linear(h2, n("ffn.w1"), Some(n("ffn.b1")))?;
            let f1 = g.gelu(f1);
            let f2 = g.linear(f1, n("ffn.w2"), Some(n("ffn.b2")))?;
            let f2 = g.mul_row(f2, g2)?;
            x = g.add(x, f2)?;
        }
        if ctx_rows > 0 {
            x = g.narrow(x, 0, ctx_rows, f * hw)?;
        }
        let fm = g.linear(cond_t, b.p("final.mod.w"), Some(b.p("final.mod.b")))?;
        let shf = g.narrow(fm, 1, 0, d)?;
        let scf = g.narrow(fm, 1, d, d)?;
        let y = modulate(g, x, shf, scf)?;
        let out = g.linear(y, b.p("out.w"), Some(b.p("out.b")))?;
        let out = g.reshape(out, &[f, hl, wl, c])?;
        let velocity = g.permute(out, &[3, 0, 1, 2])?;
        Ok(ForwardOutput { velocity, selections })
    }

    /// Inference-only velocity with frozen parameters.
    pub fn velocity(&self, z_t: &Tensor, t: f64, cond: &Conditioning) -> Result<(Tensor, Vec<Vec<Vec<usize>>>)> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let z = g.constant(z_t.clone());
        let out = self.forward(&mut g, &bound, z, t, cond)?;
        Ok((g.value(out.velocity).clone(), out.selections))
    }
}
