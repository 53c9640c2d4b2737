//! Dense double-precision tensors and the raw kernels shared by the
//! autodiff graph and by gradient-free code paths (retrieval scoring,
//! metrics, the codec).
//!
//! Storage is row-major. A scalar has an empty shape and one element.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Internal constructor for kernels whose output shape is correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; numel(shape)])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        Self::from_parts(shape.to_vec(), (0..numel(shape)).map(&mut f).collect())
    }

    /// Normal samples scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.random_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shapes("reshape", &self.shape, shape));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Element at a multi-index.
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shapes("zip_map", &self.shape, &other.shape));
        }
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let (shape, data) = permute_kernel(&self.shape, &self.data, axes)?;
        Ok(Tensor::from_parts(shape, data))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (shape, data) = narrow_kernel(&self.shape, &self.data, axis, start, len)?;
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let shapes: Vec<&[usize]> = parts.iter().map(|t| t.shape()).collect();
        let datas: Vec<&[f64]> = parts.iter().map(|t| t.data()).collect();
        let (shape, data) = concat_kernel(&shapes, &datas, axis)?;
        Ok(Tensor::from_parts(shape, data))
    }
}

// ---------------------------------------------------------------------------
// Raw kernels
// ---------------------------------------------------------------------------

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_nt_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[k×n] = a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_kernel(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn permute_kernel(
    shape: &[usize],
    data: &[f64],
    axes: &[usize],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let nd = shape.len();
    let mut seen = vec![false; nd];
    if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::dim("permute", format!("axes {axes:?} invalid for shape {shape:?}")));
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        // odometer increment over output indices
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Ok((out_shape, out))
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(crate) fn narrow_kernel(
    shape: &[usize],
    data: &[f64],
    axis: usize,
    start: usize,
    len: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(Error::dim(
            "narrow",
            format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
        ));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&data[base..base + len * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    Ok((out_shape, out))
}

pub(crate) fn concat_kernel(
    shapes: &[&[usize]],
    datas: &[&[f64]],
    axis: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let first = *shapes
        .first()
        .ok_or_else(|| Error::dim("concat", "no inputs"))?;
    if axis >= first.len() {
        return Err(Error::dim("concat", format!("axis {axis} out of range for {first:?}")));
    }
    for s in shapes {
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(first.iter())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::shapes("concat", first, s));
        }
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let total_axis: usize = shapes.iter().map(|s| s[axis]).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for (s, d) in shapes.iter().zip(datas) {
            let chunk = s[axis] * inner;
            out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut out_shape = first.to_vec();
    out_shape[axis] = total_axis;
    Ok((out_shape, out))
}

/// Geometry of a valid (unpadded) strided 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl Conv3dGeom {
    pub fn new(x_shape: &[usize], k_shape: &[usize], stride: [usize; 3]) -> Result<Self> {
        if x_shape.len() != 4 || k_shape.len() != 5 {
            return Err(Error::dim(
                "conv3d",
                format!("expected input C×T×H×W and kernel C'×C×kt×kh×kw, got {x_shape:?} and {k_shape:?}"),
            ));
        }
        if k_shape[1] != x_shape[0] {
            return Err(Error::dim(
                "conv3d",
                format!("kernel expects {} input channels, input {x_shape:?} has {}", k_shape[1], x_shape[0]),
            ));
        }
        if stride.contains(&0) {
            return Err(Error::dim("conv3d", format!("stride {stride:?} must be ≥ 1")));
        }
        let input = [x_shape[1], x_shape[2], x_shape[3]];
        let kernel = [k_shape[2], k_shape[3], k_shape[4]];
        let mut output = [0; 3];
        for d in 0..3 {
            if kernel[d] > input[d] {
                return Err(Error::dim(
                    "conv3d",
                    format!("kernel {kernel:?} larger than input extents {input:?}"),
                ));
            }
            output[d] = (input[d] - kernel[d]) / stride[d] + 1;
        }
        Ok(Self {
            c_in: x_shape[0],
            c_out: k_shape[0],
            input,
            kernel,
            stride,
            output,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.output[0], self.output[1], self.output[2]]
    }

    fn x_index(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.input[0] + t) * self.input[1] + y) * self.input[2] + x
    }

    fn k_index(&self, co: usize, ci: usize, t: usize, y: usize, x: usize) -> usize {
        (((co * self.c_in + ci) * self.kernel[0] + t) * self.kernel[1] + y) * self.kernel[2] + x
    }

    fn o_index(&self, co: usize, t: usize, y: usize, x: usize) -> usize {
        ((co * self.output[0] + t) * self.output[1] + y) * self.output[2] + x
    }

    /// Visit every (output cell, kernel tap) pair with flat offsets.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [ot, oh, ow] = self.output;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                for dt in 0..kt {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let ki = self.k_index(co, ci, dt, dy, dx);
                            for t in 0..ot {
                                for y in 0..oh {
                                    let xi0 = self.x_index(ci, t * st + dt, y * sh + dy, dx);
                                    let oi0 = self.o_index(co, t, y, 0);
                                    for x in 0..ow {
                                        f(oi0 + x, xi0 + x * sw, ki);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_kernel(geom: &Conv3dGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; numel(&geom.output_shape())];
    geom.for_each_tap(|oi, xi, ki| out[oi] += x[xi] * k[ki]);
    out
}

/// Returns (d input, d kernel).
pub(crate) fn conv3d_backward(
    geom: &Conv3dGeom,
    x: &[f64],
    k: &[f64],
    g: &[f64],
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut dx = want_x.then(|| vec![0.0; x.len()]);
    let mut dk = want_k.then(|| vec![0.0; k.len()]);
    geom.for_each_tap(|oi, xi, ki| {
        let go = g[oi];
        if let Some(dx) = dx.as_mut() {
            dx[xi] += go * k[ki];
        }
        if let Some(dk) = dk.as_mut() {
            dk[ki] += go * x[xi];
        }
    });
    (dx, dk)
}

/// Conv3d on plain tensors, no graph recording.
pub fn conv3d(x: &Tensor, kernel: &Tensor, stride: [usize; 3]) -> Result<Tensor> {
    let geom = Conv3dGeom::new(x.shape(), kernel.shape(), stride)?;
    Ok(Tensor::from_parts(
        geom.output_shape(),
        conv3d_kernel(&geom, x.data(), kernel.data()),
    ))
}

pub(crate) fn pool_blocks(shape: &[usize], out: (usize, usize)) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::dim("avg_pool2d", format!("expected C×H×W input, got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if out.0 == 0 || out.1 == 0 || h % out.0 != 0 || w % out.1 != 0 {
        return Err(Error::Config(format!(
            "avg_pool2d: input extent {h}×{w} not divisible into {}×{}",
            out.0, out.1
        )));
    }
    Ok((c, h, w, (h / out.0) * (w / out.1)))
}

pub(crate) fn avg_pool2d_kernel(x: &[f64], c: usize, h: usize, w: usize, out: (usize, usize)) -> Vec<f64> {
    let (oh, ow) = out;
    let (bh, bw) = (h / oh, w / ow);
    let inv = 1.0 / (bh * bw) as f64;
    let mut res = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            let src = &x[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = (ch * oh + y / bh) * ow;
            for (xi, &v) in src.iter().enumerate() {
                res[dst + xi / bw] += v;
            }
        }
    }
    res.iter_mut().for_each(|v| *v *= inv);
    res
}

/// Average pooling over non-overlapping blocks, C×H×W → C×h×w.
pub fn avg_pool2d(x: &Tensor, out: (usize, usize)) -> Result<Tensor> {
    let (c, h, w, _) = pool_blocks(x.shape(), out)?;
    Ok(Tensor::from_parts(
        vec![c, out.0, out.1],
        avg_pool2d_kernel(x.data(), c, h, w, out),
    ))
}

pub(crate) fn softmax_kernel(shape: &[usize], data: &[f64], axis: usize) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (data[at(j)] - max).exp();
                out[at(j)] = e;
                sum += e;
            }
            for j in 0..n {
                out[at(j)] /= sum;
            }
        }
    }
    out
}

/// Max-subtracted softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim() {
        return Err(Error::dim("softmax", format!("axis {axis} out of range for {:?}", x.shape())));
    }
    Ok(Tensor::from_parts(
        x.shape().to_vec(),
        softmax_kernel(x.shape(), x.data(), axis),
    ))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shapes("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Ok(Tensor::from_parts(vec![m, n], matmul_kernel(a.data(), b.data(), m, k, n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data_length() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn permute_then_inverse_is_identity() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), t.at(&[1, 2, 3]));
        let back = p.permute(&inverse_axes(&[2, 0, 1])).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn narrow_and_concat_roundtrip() {
        let t = Tensor::from_fn(&[3, 5, 2], |i| i as f64 * 0.5);
        let a = t.narrow(1, 0, 2).unwrap();
        let b = t.narrow(1, 2, 3).unwrap();
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap(), t);
    }

    #[test]
    fn conv_geometry_rejects_oversized_kernel() {
        let err = Conv3dGeom::new(&[1, 2, 4, 4], &[1, 1, 3, 1, 1], [1, 1, 1]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn matmul_nt_and_tn_agree_with_plain_matmul() {
        let a = Tensor::from_fn(&[3, 4], |i| (i as f64).sin());
        let b = Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.3).cos());
        let reference = matmul(&a, &b).unwrap();
        let bt = transpose_kernel(b.data(), 4, 5);
        let nt = matmul_nt_kernel(a.data(), &bt, 3, 4, 5);
        let at = transpose_kernel(a.data(), 3, 4);
        let tn = matmul_tn_kernel(&at, b.data(), 4, 3, 5);
        for ((r, x), y) in reference.data().iter().zip(&nt).zip(&tn) {
            assert!((r - x).abs() < 1e-12 && (r - y).abs() < 1e-12);
        }
    }
}
