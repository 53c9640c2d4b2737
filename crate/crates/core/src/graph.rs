//! Eager reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the [`Graph`] and computes its value
//! immediately. Nodes are only ever appended, so creation order is a
//! topological order and [`Graph::backward`] walks it once in reverse.
//! Leaf gradients accumulate across backward calls until
//! [`Graph::zero_grad`].
//!
//! Row-wise operations (`add_row`, `mul_row`, `layer_norm`, ...) treat the
//! last axis as the channel axis and everything before it as rows.

use crate::error::{Error, Result};
use crate::tensor::{self, numel, Conv3dGeom, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    RepeatRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Gelu(Var),
    Silu(Var),
    Softmax(Var, usize),
    LayerNorm(Var, Vec<f64>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    Conv3d { x: Var, k: Var, geom: Conv3dGeom },
    AvgPool2d(Var, (usize, usize)),
    MseLoss(Var, Var),
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b)
            | MseLoss(a, b) => vec![*a, *b],
            Conv3d { x, k, .. } => vec![*x, *k],
            Transpose(a) | Scale(a, _) | AddScalar(a) | RepeatRows(a, _) | GatherRows(a, _)
            | Gelu(a) | Silu(a) | Softmax(a, _) | LayerNorm(a, _) | Reshape(a) | Permute(a, _)
            | AvgPool2d(a, _) | Sum(a) => vec![*a],
            Narrow { x, .. } => vec![*x],
            Concat(v, _) => v.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation; owns every intermediate value.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn rows_of(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.last() {
        Some(&d) => Ok((numel(shape) / d, d)),
        None => Err(Error::dim("row op", "scalar has no channel axis")),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Tensor::from_parts(shape, data), op, needs_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // -----------------------------------------------------------------------
    // Operations
    // -----------------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shapes("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = tensor::matmul_kernel(self.data(a), self.data(b), m, k, n);
        Ok(self.record(vec![m, n], out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("expected 2-D input, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let out = tensor::transpose_kernel(self.data(a), m, n);
        Ok(self.record(vec![n, m], out, Op::Transpose(a)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shapes(op, self.shape(a), self.shape(b)));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        Ok(self.record(shape, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        Ok(self.record(shape, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        Ok(self.record(shape, out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.data(a).iter().map(|x| x * s).collect();
        self.record(self.shape(a).to_vec(), out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.data(a).iter().map(|x| x + s).collect();
        self.record(self.shape(a).to_vec(), out, Op::AddScalar(a))
    }

    fn row_broadcast(&self, op: &'static str, x: Var, b: Var) -> Result<(usize, usize)> {
        let (rows, d) = rows_of(self.shape(x))?;
        if self.value(b).numel() != d {
            return Err(Error::shapes(op, self.shape(x), self.shape(b)));
        }
        Ok((rows, d))
    }

    /// `x + b` with `b` (one channel vector) broadcast over every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, d) = self.row_broadcast("add_row", x, b)?;
        let bd = self.data(b);
        let out = self.data(x).iter().enumerate().map(|(i, v)| v + bd[i % d]).collect();
        Ok(self.record(self.shape(x).to_vec(), out, Op::AddRow(x, b)))
    }

    /// `x * b` with `b` broadcast over every row.
    pub fn mul_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, d) = self.row_broadcast("mul_row", x, b)?;
        let bd = self.data(b);
        let out = self.data(x).iter().enumerate().map(|(i, v)| v * bd[i % d]).collect();
        Ok(self.record(self.shape(x).to_vec(), out, Op::MulRow(x, b)))
    }

    /// Repeats each leading-axis slice `n` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.is_empty() || n == 0 {
            return Err(Error::dim("repeat_rows", format!("cannot repeat {s:?} {n} times")));
        }
        let row: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] *= n;
        let mut out = Vec::with_capacity(numel(&shape));
        for r in self.data(x).chunks(row) {
            for _ in 0..n {
                out.extend_from_slice(r);
            }
        }
        Ok(self.record(shape, out, Op::RepeatRows(x, n)))
    }

    /// Selects leading-axis slices by index (indices may repeat).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.is_empty() || idx.is_empty() || idx.iter().any(|&i| i >= s[0]) {
            return Err(Error::dim(
                "gather_rows",
                format!("indices {idx:?} invalid for shape {s:?}"),
            ));
        }
        let row: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = idx.len();
        let src = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            out.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        Ok(self.record(shape, out, Op::GatherRows(x, idx.to_vec())))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self
            .data(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        self.record(self.shape(x).to_vec(), out, Op::Gelu(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| v * sigmoid(v)).collect();
        self.record(self.shape(x).to_vec(), out, Op::Silu(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(Error::dim("softmax", format!("axis {axis} out of range for {s:?}")));
        }
        let out = tensor::softmax_kernel(s, self.data(x), axis);
        Ok(self.record(s.to_vec(), out, Op::Softmax(x, axis)))
    }

    /// Normalizes each row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (rows, d) = rows_of(self.shape(x))?;
        let src = self.data(x);
        let mut out = vec![0.0; rows * d];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        Ok(self.record(self.shape(x).to_vec(), out, Op::LayerNorm(x, inv_std)))
    }

    /// Layer norm with learned per-channel scale and shift.
    pub fn layer_norm_affine(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = self.layer_norm(x, eps)?;
        let s = self.mul_row(n, gamma)?;
        self.add_row(s, beta)
    }

    /// `x · w + b` on row-major `[N, in]` input.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if numel(shape) != numel(s) || shape.contains(&0) {
            return Err(Error::shapes("reshape", s, shape));
        }
        let out = self.data(x).to_vec();
        Ok(self.record(shape.to_vec(), out, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let (shape, out) = tensor::permute_kernel(self.shape(x), self.data(x), axes)?;
        Ok(self.record(shape, out, Op::Permute(x, axes.to_vec())))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<&[usize]> = xs.iter().map(|&v| self.shape(v)).collect();
        let datas: Vec<&[f64]> = xs.iter().map(|&v| self.data(v)).collect();
        let (shape, out) = tensor::concat_kernel(&shapes, &datas, axis)?;
        Ok(self.record(shape, out, Op::Concat(xs.to_vec(), axis)))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (shape, out) = tensor::narrow_kernel(self.shape(x), self.data(x), axis, start, len)?;
        Ok(self.record(shape, out, Op::Narrow { x, axis, start }))
    }

    /// Valid strided 3D convolution, `C×T×H×W` input with `C'×C×kt×kh×kw` kernel.
    pub fn conv3d(&mut self, x: Var, k: Var, stride: [usize; 3]) -> Result<Var> {
        let geom = Conv3dGeom::new(self.shape(x), self.shape(k), stride)?;
        let out = tensor::conv3d_kernel(&geom, self.data(x), self.data(k));
        Ok(self.record(geom.output_shape(), out, Op::Conv3d { x, k, geom }))
    }

    pub fn avg_pool2d(&mut self, x: Var, out: (usize, usize)) -> Result<Var> {
        let (c, h, w, _) = tensor::pool_blocks(self.shape(x), out)?;
        let res = tensor::avg_pool2d_kernel(self.data(x), c, h, w, out);
        Ok(self.record(vec![c, out.0, out.1], res, Op::AvgPool2d(x, out)))
    }

    /// Mean of squared differences over all elements.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse_loss", a, b)?;
        let n = self.value(a).numel() as f64;
        let s: f64 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.record(Vec::new(), vec![s / n], Op::MseLoss(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.record(Vec::new(), vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    // -----------------------------------------------------------------------
    // Backward
    // -----------------------------------------------------------------------

    /// Accumulates ∂loss/∂leaf into every gradient-tracked leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<(usize, Vec<f64>)> = Vec::new();

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| match &mut adj[v.0] {
            Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    acc(*a, tensor::matmul_nt_kernel(g, self.data(*b), m, n, k));
                }
                if self.wants(*b) {
                    acc(*b, tensor::matmul_tn_kernel(self.data(*a), g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                acc(*a, tensor::transpose_kernel(g, s[1], s[0]));
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::AddRow(x, b) => {
                let d = self.value(*b).numel();
                if self.wants(*x) {
                    acc(*x, g.to_vec());
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; d];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % d] += v;
                    }
                    acc(*b, gb);
                }
            }
            Op::MulRow(x, b) => {
                let d = self.value(*b).numel();
                let (xd, bd) = (self.data(*x), self.data(*b));
                if self.wants(*x) {
                    acc(*x, g.iter().enumerate().map(|(i, v)| v * bd[i % d]).collect());
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; d];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % d] += v * xd[i];
                    }
                    acc(*b, gb);
                }
            }
            Op::RepeatRows(x, n) => {
                let s = self.shape(*x);
                let row: usize = s[1..].iter().product();
                let mut gx = vec![0.0; numel(s)];
                for (r, dst) in gx.chunks_mut(row).enumerate() {
                    for k in 0..*n {
                        let src = &g[(r * n + k) * row..(r * n + k + 1) * row];
                        dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
                acc(*x, gx);
            }
            Op::GatherRows(x, idx) => {
                let s = self.shape(*x);
                let row: usize = s[1..].iter().product();
                let mut gx = vec![0.0; numel(s)];
                for (j, &i) in idx.iter().enumerate() {
                    let dst = &mut gx[i * row..(i + 1) * row];
                    dst.iter_mut()
                        .zip(&g[j * row..(j + 1) * row])
                        .for_each(|(a, b)| *a += b);
                }
                acc(*x, gx);
            }
            Op::Gelu(x) => {
                let gx = g
                    .iter()
                    .zip(self.data(*x))
                    .map(|(gv, &v)| {
                        let th = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        gv * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
                    })
                    .collect();
                acc(*x, gx);
            }
            Op::Silu(x) => {
                let gx = g
                    .iter()
                    .zip(self.data(*x))
                    .map(|(gv, &v)| {
                        let s = sigmoid(v);
                        gv * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                acc(*x, gx);
            }
            Op::Softmax(x, axis) => {
                let s = self.shape(*x);
                let outer: usize = s[..*axis].iter().product();
                let n = s[*axis];
                let inner: usize = s[*axis + 1..].iter().product();
                let mut gx = vec![0.0; out.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + k;
                        let dot: f64 = (0..n).map(|j| g[at(j)] * out[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::LayerNorm(x, inv_std) => {
                let d = *self.shape(*x).last().unwrap();
                let mut gx = vec![0.0; out.len()];
                for (r, &inv) in inv_std.iter().enumerate() {
                    let y = &out[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = inv * (gr[j] - mean_g - y[j] * mean_gy);
                    }
                }
                acc(*x, gx);
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Permute(x, axes) => {
                let inv = tensor::inverse_axes(axes);
                let (_, gx) = tensor::permute_kernel(node.value.shape(), g, &inv)
                    .expect("inverse permutation of a valid permutation");
                acc(*x, gx);
            }
            Op::Concat(xs, axis) => {
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.wants(x) {
                        let (_, gx) =
                            tensor::narrow_kernel(node.value.shape(), g, *axis, offset, len)
                                .expect("concat slice in range");
                        acc(x, gx);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let s = self.shape(*x);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let (n, len) = (s[*axis], node.value.shape()[*axis]);
                let mut gx = vec![0.0; numel(s)];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, gx);
            }
            Op::Conv3d { x, k, geom } => {
                let (dx, dk) = tensor::conv3d_backward(
                    geom,
                    self.data(*x),
                    self.data(*k),
                    g,
                    self.wants(*x),
                    self.wants(*k),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dk) = dk {
                    acc(*k, dk);
                }
            }
            Op::AvgPool2d(x, (oh, ow)) => {
                let s = self.shape(*x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let (bh, bw) = (h / oh, w / ow);
                let inv = 1.0 / (bh * bw) as f64;
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(ch * h + y) * w + xx] = g[(ch * oh + y / bh) * ow + xx / bw] * inv;
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::MseLoss(a, b) => {
                let n = self.value(*a).numel() as f64;
                let diff: Vec<f64> = self
                    .data(*a)
                    .iter()
                    .zip(self.data(*b))
                    .map(|(x, y)| 2.0 * (x - y) / n * g[0])
                    .collect();
                if self.wants(*b) {
                    acc(*b, diff.iter().map(|v| -v).collect());
                }
                if self.wants(*a) {
                    acc(*a, diff);
                }
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
        }
    }
}
