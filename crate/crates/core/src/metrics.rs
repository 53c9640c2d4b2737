//! PSNR, SSIM and dynamic subject consistency (DSC).
//!
//! Videos are `C×F×H×W` tensors with values in `[0, 1]`. DSC crops subject
//! boxes, resizes each crop to a fixed square with nearest-neighbour
//! sampling, maps it to a feature vector and averages cosine similarities
//! over frames, then over subjects.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sim::{Rect, RenderedClip};
use crate::tensor::Tensor;

pub const CROP_SIZE: usize = 16;

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shapes(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.numel() as f64)
}

/// `10·log10(1/MSE)` in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_TAPS: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_taps(n: usize) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode Gaussian filter of an `h×w` plane.
fn blur(x: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..n).map(|k| taps[k] * x[y * w + ox + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..n).map(|k| taps[k] * rows[(oy + k) * ow + ox]).sum();
        }
    }
    (out, oh, ow)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mu_a, _, _) = blur(a, h, w, taps);
    let (mu_b, _, _) = blur(b, h, w, taps);
    let (aa, _, _) = blur(&prod(&|x, _| x * x), h, w, taps);
    let (bb, _, _) = blur(&prod(&|_, y| y * y), h, w, taps);
    let (ab, _, _) = blur(&prod(&|x, y| x * y), h, w, taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM: 11-tap Gaussian window (σ = 1.5, shrunk to the largest odd size
/// that fits smaller frames), valid windows, averaged over windows and
/// channels per frame, then over frames.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same("ssim", a, b)?;
    let &[c, f, h, w] = a.shape() else {
        return Err(Error::dim("ssim", format!("expected C×F×H×W, got {:?}", a.shape())));
    };
    let mut n = SSIM_TAPS.min(h).min(w);
    if n % 2 == 0 {
        n -= 1;
    }
    let taps = gaussian_taps(n);
    let plane = h * w;
    let mut total = 0.0;
    for fi in 0..f {
        let mut frame = 0.0;
        for ci in 0..c {
            let off = (ci * f + fi) * plane;
            frame += ssim_plane(&a.data()[off..off + plane], &b.data()[off..off + plane], h, w, &taps);
        }
        total += frame / c as f64;
    }
    Ok(total / f as f64)
}

/// Maps a `C×S×S` crop to a feature vector.
pub trait FeatureExtractor: Sync {
    fn id(&self) -> &str;
    fn extract(&self, crop: &Tensor) -> Vec<f64>;
}

fn center_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    v
}

/// Flattened crop, mean-subtracted and unit-normalized.
#[derive(Clone, Debug, Default)]
pub struct PatchExtractor;

impl FeatureExtractor for PatchExtractor {
    fn id(&self) -> &str {
        "patch"
    }

    fn extract(&self, crop: &Tensor) -> Vec<f64> {
        center_normalize(crop.data().to_vec())
    }
}

/// Fixed random Gaussian projection of the flattened crop, then
/// mean-subtracted and unit-normalized.
#[derive(Clone, Debug)]
pub struct ProjectionExtractor {
    matrix: Vec<f64>,
    input_dim: usize,
    output_dim: usize,
}

impl ProjectionExtractor {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let matrix = (0..input_dim * output_dim)
            .map(|_| r.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Self {
            matrix,
            input_dim,
            output_dim,
        }
    }
}

impl FeatureExtractor for ProjectionExtractor {
    fn id(&self) -> &str {
        "projection"
    }

    fn extract(&self, crop: &Tensor) -> Vec<f64> {
        let x = crop.data();
        assert_eq!(x.len(), self.input_dim, "crop size does not match projection input");
        let v = (0..self.output_dim)
            .map(|o| {
                let row = &self.matrix[o * self.input_dim..(o + 1) * self.input_dim];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect();
        center_normalize(v)
    }
}

/// Cosine of two unit-or-zero feature vectors. Two zero vectors are treated
/// as identical (1); one zero vector gives 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let za = a.iter().all(|&v| v == 0.0);
    let zb = b.iter().all(|&v| v == 0.0);
    match (za, zb) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    }
}

/// Crop of frame `f` inside `rect` (frame coordinates, clipped to the frame)
/// resized to `size×size` by nearest-neighbour sampling. `None` when the
/// clipped box is empty.
pub fn crop_resize(video: &Tensor, f: usize, rect: &Rect, size: usize) -> Option<Tensor> {
    let &[c, _, h, w] = video.shape() else {
        return None;
    };
    let r = rect.intersect(&Rect::new(0, 0, w as i64, h as i64))?;
    let data = (0..c)
        .flat_map(|ci| {
            (0..size).flat_map(move |i| {
                (0..size).map(move |j| {
                    let y = r.y as usize + i * r.h as usize / size;
                    let x = r.x as usize + j * r.w as usize / size;
                    video.data()[((ci * video.shape()[1] + f) * h + y) * w + x]
                })
            })
        })
        .collect();
    Some(Tensor::new(vec![c, size, size], data).expect("crop extents"))
}

/// Per-frame boxes of one subject in frame coordinates; `None` where the
/// subject is not visible.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectBoxes {
    pub subject_id: usize,
    pub boxes: Vec<Option<Rect>>,
}

/// Boxes of every subject for frames `[start, start+len)` of `clip`, relative
/// to the camera window of each frame.
pub fn clip_boxes(clip: &RenderedClip, start: usize, len: usize) -> Vec<SubjectBoxes> {
    clip.subject_tracks
        .iter()
        .map(|t| SubjectBoxes {
            subject_id: t.subject_id,
            boxes: (start..start + len)
                .map(|f| {
                    let win = clip.windows[f];
                    t.visible[f].then(|| t.boxes[f].relative_to((win.x, win.y)))
                })
                .collect(),
        })
        .collect()
}

fn features(video: &Tensor, boxes: &[Option<Rect>], ex: &dyn FeatureExtractor) -> Vec<Vec<f64>> {
    boxes
        .iter()
        .enumerate()
        .filter_map(|(f, b)| b.as_ref().and_then(|r| crop_resize(video, f, r, CROP_SIZE)))
        .map(|crop| ex.extract(&crop))
        .collect()
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-subject consistency against the ground truth at the same frames
/// (`None` for subjects never visible).
pub fn dsc_gt_subjects(pred: &Tensor, gt: &Tensor, boxes: &[SubjectBoxes], ex: &dyn FeatureExtractor) -> Result<Vec<Option<f64>>> {
    check_same("dsc", pred, gt)?;
    Ok(boxes
        .iter()
        .map(|s| {
            mean_present(s.boxes.iter().enumerate().map(|(f, b)| {
                let r = b.as_ref()?;
                let a = crop_resize(pred, f, r, CROP_SIZE)?;
                let g = crop_resize(gt, f, r, CROP_SIZE)?;
                Some(cosine(&ex.extract(&a), &ex.extract(&g)))
            }))
        })
        .collect())
}

/// Mean over subjects of ground-truth consistency; `None` when no subject is
/// visible in the target.
pub fn dsc_gt(pred: &Tensor, gt: &Tensor, boxes: &[SubjectBoxes], ex: &dyn FeatureExtractor) -> Result<Option<f64>> {
    Ok(mean_present(dsc_gt_subjects(pred, gt, boxes, ex)?.into_iter()))
}

/// Nearest-index resampling of `len_from` items onto `len_to` slots.
pub fn resample_index(i: usize, len_from: usize, len_to: usize) -> usize {
    (i * len_from / len_to).min(len_from - 1)
}

/// Per-subject consistency between predicted frames and context frames.
/// Visible-frame feature sequences are aligned by resampling the shorter
/// one onto the longer.
pub fn dsc_ctx_subjects(
    pred: &Tensor,
    pred_boxes: &[SubjectBoxes],
    ctx: &Tensor,
    ctx_boxes: &[SubjectBoxes],
    ex: &dyn FeatureExtractor,
) -> Vec<Option<f64>> {
    pred_boxes
        .iter()
        .map(|p| {
            let c = ctx_boxes.iter().find(|c| c.subject_id == p.subject_id)?;
            let fp = features(pred, &p.boxes, ex);
            let fc = features(ctx, &c.boxes, ex);
            if fp.is_empty() || fc.is_empty() {
                return None;
            }
            let n = fp.len().max(fc.len());
            let total: f64 = (0..n)
                .map(|i| {
                    cosine(
                        &fp[resample_index(i, fp.len(), n)],
                        &fc[resample_index(i, fc.len(), n)],
                    )
                })
                .sum();
            Some(total / n as f64)
        })
        .collect()
}

pub fn dsc_ctx(
    pred: &Tensor,
    pred_boxes: &[SubjectBoxes],
    ctx: &Tensor,
    ctx_boxes: &[SubjectBoxes],
    ex: &dyn FeatureExtractor,
) -> Option<f64> {
    mean_present(dsc_ctx_subjects(pred, pred_boxes, ctx, ctx_boxes, ex).into_iter())
}

/// Metrics of one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    pub clip: String,
    pub psnr: f64,
    pub ssim: f64,
    pub dsc_ctx: Option<f64>,
    pub dsc_gt: Option<f64>,
}

/// Inputs to score one clip.
pub struct ClipEval<'a> {
    pub clip: String,
    pub pred: &'a Tensor,
    pub gt: &'a Tensor,
    pub target_boxes: &'a [SubjectBoxes],
    pub ctx: &'a Tensor,
    pub ctx_boxes: &'a [SubjectBoxes],
}

pub fn score_clip(e: &ClipEval, ex: &dyn FeatureExtractor) -> Result<ClipScores> {
    Ok(ClipScores {
        clip: e.clip.clone(),
        psnr: psnr(e.pred, e.gt)?,
        ssim: ssim(e.pred, e.gt)?,
        dsc_ctx: dsc_ctx(e.pred, e.target_boxes, e.ctx, e.ctx_boxes, ex),
        dsc_gt: dsc_gt(e.pred, e.gt, e.target_boxes, ex)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and population standard deviation of present values.
pub fn stat(values: impl IntoIterator<Item = f64>) -> Stat {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return Stat {
            mean: f64::NAN,
            std: f64::NAN,
            count: 0,
        };
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = if v.iter().all(|&x| x == v[0]) {
        0.0
    } else {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    Stat {
        mean,
        std,
        count: v.len(),
    }
}

/// Standard deviation of the mean across `resamples` bootstrap resamples.
pub fn bootstrap_std(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut r = rng::seeded(seed);
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..values.len()).map(|_| values[r.random_range(0..values.len())]).sum::<f64>() / values.len() as f64)
        .collect();
    stat(means).std
}

pub const METRIC_COLUMNS: [&str; 4] = ["psnr", "ssim", "dsc_ctx", "dsc_gt"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub extractor: String,
    pub rows: Vec<ClipScores>,
}

impl Report {
    pub fn column(&self, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| match metric {
                "psnr" => Some(r.psnr),
                "ssim" => Some(r.ssim),
                "dsc_ctx" => r.dsc_ctx,
                "dsc_gt" => r.dsc_gt,
                _ => None,
            })
            .collect()
    }

    pub fn summary(&self, metric: &str) -> Stat {
        stat(self.column(metric))
    }

    /// Tab-separated `clip metric value` rows (absent values as `absent`)
    /// followed by a `# summary` block of `metric mean std count` rows.
    pub fn to_text(&self) -> String {
        let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.6}") };
        let mut out = format!("# extractor\t{}\nclip\tmetric\tvalue\n", self.extractor);
        for r in &self.rows {
            for (m, v) in METRIC_COLUMNS.iter().zip([Some(r.psnr), Some(r.ssim), r.dsc_ctx, r.dsc_gt]) {
                out.push_str(&format!("{}\t{m}\t{}\n", r.clip, v.map_or("absent".into(), fmt)));
            }
        }
        out.push_str("# summary\nmetric\tmean\tstd\tcount\n");
        for m in METRIC_COLUMNS {
            let s = self.summary(m);
            out.push_str(&format!("{m}\t{}\t{}\t{}\n", fmt(s.mean), fmt(s.std), s.count));
        }
        out
    }
}
