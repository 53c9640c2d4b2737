//! Memory tokens, affinity scoring, top-K and FOV selection, and the
//! retrieval attention that combines selected memory with a local window.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::sim::{Pose, RectF};
use crate::tensor::{self, Tensor};

/// Tokenizer output with the latent frames each token was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryTokens {
    /// `C'×f'×h×w`.
    pub values: Tensor,
    /// Source latent-frame indices per token time step.
    pub provenance: Vec<Vec<usize>>,
    /// Poses of the source latent frames, aligned with `provenance`.
    pub poses: Vec<Vec<Pose>>,
}

impl MemoryTokens {
    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.values.shape()[2], self.values.shape()[3])
    }

    /// Token pose: mean of its source-frame poses.
    pub fn token_pose(&self, j: usize) -> Result<Pose> {
        let poses = self
            .poses
            .get(j)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Usage(format!("memory token {j} has no source poses")))?;
        Pose::average(poses)
    }
}

/// Latent frames covered by each of the `⌊(f−kt)/st⌋+1` token steps.
pub fn provenance(f_mem: usize, kt: usize, st: usize) -> Vec<Vec<usize>> {
    if f_mem < kt || st == 0 {
        return Vec::new();
    }
    (0..(f_mem - kt) / st + 1).map(|j| (j * st..j * st + kt).collect()).collect()
}

/// `conv3d(Z_mem)` with provenance, for a `C×f×H×W` memory latent and a
/// `C'×C×kt×kh×kw` kernel. `poses` holds one pose per memory latent frame.
pub fn tokenize_memory(z_mem: &Tensor, kernel: &Tensor, stride: [usize; 3], poses: &[Pose]) -> Result<MemoryTokens> {
    let (zs, ks) = (z_mem.shape(), kernel.shape());
    if zs.len() != 4 || ks.len() != 5 {
        return Err(Error::Config(format!("memory {zs:?} incompatible with kernel {ks:?}")));
    }
    if zs[1] < ks[2] || zs[2] < ks[3] || zs[3] < ks[4] {
        return Err(Error::Config(format!(
            "memory extents {:?} smaller than tokenizer kernel {:?}",
            &zs[1..],
            &ks[2..]
        )));
    }
    if poses.len() != zs[1] {
        return Err(Error::dim("tokenize_memory", format!("{} poses for {} memory frames", poses.len(), zs[1])));
    }
    let values = tensor::conv3d(z_mem, kernel, stride)?;
    let prov = provenance(zs[1], ks[2], stride[0]);
    let token_poses = prov.iter().map(|p| p.iter().map(|&i| poses[i]).collect()).collect();
    Ok(MemoryTokens {
        values,
        provenance: prov,
        poses: token_poses,
    })
}

/// Affinity of one query frame to every memory token:
/// `S_j = (1/√d) Σ_{y,x} ⟨q̃(y,x), k_j(y,x)⟩` with `q̃` the query average-pooled
/// to the key grid. `q` is `d×H'×W'`, `keys` is `d×f'×h×w`.
pub fn affinity(q: &Tensor, keys: &Tensor) -> Result<Vec<f64>> {
    let &[d, f, h, w] = keys.shape() else {
        return Err(Error::dim("affinity", format!("keys must be d×f'×h×w, got {:?}", keys.shape())));
    };
    if q.ndim() != 3 || q.shape()[0] != d {
        return Err(Error::shapes("affinity", q.shape(), keys.shape()));
    }
    let pooled = tensor::avg_pool2d(q, (h, w))?;
    let (pq, kd) = (pooled.data(), keys.data());
    let hw = h * w;
    let scale = 1.0 / (d as f64).sqrt();
    Ok((0..f)
        .map(|j| {
            let mut s = 0.0;
            for c in 0..d {
                let qrow = &pq[c * hw..(c + 1) * hw];
                let krow = &kd[(c * f + j) * hw..(c * f + j + 1) * hw];
                s += qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
            }
            s * scale
        })
        .collect())
}

/// Indices of the `min(k, n)` largest scores, ties resolved toward the
/// earlier index, returned in ascending order.
pub fn topk_select(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    order.sort_unstable();
    order
}

/// Overlap area between the target window and each token's averaged window.
pub fn fov_scores(target: &Pose, window: (f64, f64), tokens: &MemoryTokens) -> Result<Vec<f64>> {
    let rect = |p: &Pose| {
        let (cx, cy) = p.center();
        RectF {
            cx,
            cy,
            w: window.0,
            h: window.1,
        }
    };
    let t = rect(target);
    (0..tokens.len())
        .map(|j| Ok(rect(&tokens.token_pose(j)?).intersection_area(&t)))
        .collect()
}

pub fn fov_overlap_select(target: &Pose, window: (f64, f64), tokens: &MemoryTokens, k: usize) -> Result<Vec<usize>> {
    Ok(topk_select(&fov_scores(target, window, tokens)?, k))
}

/// Frames `[i − ⌊(len−1)/2⌋, i + len − 1 − ⌊(len−1)/2⌋]` clipped to `[0, f)`.
pub fn local_window(i: usize, f: usize, len: usize) -> Range<usize> {
    let left = len.saturating_sub(1) / 2;
    let right = len.saturating_sub(1) - left;
    i.saturating_sub(left)..(i + right + 1).min(f)
}

/// Scaled dot-product attention per head over `[n, D]` queries and `[m, D]`
/// keys/values; heads are contiguous channel groups.
pub fn multi_head(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let d = *g.shape(q).last().unwrap_or(&0);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible into {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.narrow(q, 1, h * dh, dh)?, g.narrow(k, 1, h * dh, dh)?, g.narrow(v, 1, h * dh, dh)?)
        };
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let logits = g.scale(logits, scale);
        let attn = g.softmax(logits, 1)?;
        outs.push(g.matmul(attn, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat(&outs, 1)
    }
}

/// Memory keys and values in the graph, both `[f', h·w, D]`.
#[derive(Clone, Copy, Debug)]
pub struct MemoryKv {
    pub k: Var,
    pub v: Var,
}

/// Attention for target frames laid out as consecutive groups of
/// `frame_tokens` rows. Frame `i` attends to the memory tokens in
/// `selections[i]` (each contributing all its spatial cells) followed by the
/// target tokens of its local window.
#[allow(clippy::too_many_arguments)]
pub fn retrieval_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    memory: Option<MemoryKv>,
    selections: &[Vec<usize>],
    frame_tokens: usize,
    window: usize,
    heads: usize,
) -> Result<Var> {
    let n = g.shape(q)[0];
    if frame_tokens == 0 || n % frame_tokens != 0 {
        return Err(Error::dim("retrieval_attention", format!("{n} rows are not whole frames of {frame_tokens}")));
    }
    let f = n / frame_tokens;
    if selections.len() != f {
        return Err(Error::dim("retrieval_attention", format!("{} selections for {f} frames", selections.len())));
    }
    if window == 0 {
        return Err(Error::Config("local window must be at least one frame".into()));
    }
    let d = g.shape(q)[1];
    let mut outs = Vec::with_capacity(f);
    for (i, sel) in selections.iter().enumerate() {
        let qi = g.narrow(q, 0, i * frame_tokens, frame_tokens)?;
        let win = local_window(i, f, window);
        let start = win.start * frame_tokens;
        let len = win.len() * frame_tokens;
        let mut k_loc = g.narrow(k, 0, start, len)?;
        let mut v_loc = g.narrow(v, 0, start, len)?;
        if let (Some(mem), false) = (memory, sel.is_empty()) {
            let mk = g.gather_rows(mem.k, sel)?;
            let mv = g.gather_rows(mem.v, sel)?;
            let rows = g.value(mk).numel() / d;
            let mk = g.reshape(mk, &[rows, d])?;
            let mv = g.reshape(mv, &[rows, d])?;
            k_loc = g.concat(&[mk, k_loc], 0)?;
            v_loc = g.concat(&[mv, v_loc], 0)?;
        }
        outs.push(multi_head(g, qi, k_loc, v_loc, heads)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat(&outs, 0)
    }
}
