//! Planar camera poses embedded in the 12-number (R, t) layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const POSE_DIM: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity_at(x: f64, y: f64) -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [x, y, 0.0],
        }
    }

    /// Rotation about the optical (z) axis.
    pub fn with_yaw(x: f64, y: f64, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation: [x, y, 0.0],
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.translation[0], self.translation[1])
    }

    /// Row-major R followed by t.
    pub fn flatten(&self) -> [f64; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        for r in 0..3 {
            out[r * 3..r * 3 + 3].copy_from_slice(&self.rotation[r]);
        }
        out[9..].copy_from_slice(&self.translation);
        out
    }

    pub fn unflatten(v: &[f64]) -> Result<Self> {
        if v.len() != POSE_DIM {
            return Err(Error::dim("pose unflatten", format!("expected 12 values, got {}", v.len())));
        }
        let mut rotation = [[0.0; 3]; 3];
        for (r, row) in rotation.iter_mut().enumerate() {
            row.copy_from_slice(&v[r * 3..r * 3 + 3]);
        }
        Ok(Self {
            rotation,
            translation: [v[9], v[10], v[11]],
        })
    }

    /// Mean translation of `poses`; rotation taken from the first.
    pub fn average(poses: &[Pose]) -> Result<Pose> {
        let first = poses
            .first()
            .ok_or_else(|| Error::Usage("cannot average an empty pose list".into()))?;
        let n = poses.len() as f64;
        let mut t = [0.0; 3];
        for p in poses {
            for (a, b) in t.iter_mut().zip(&p.translation) {
                *a += b;
            }
        }
        t.iter_mut().for_each(|v| *v /= n);
        Ok(Pose {
            rotation: first.rotation,
            translation: t,
        })
    }
}

/// Per-frame camera poses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraPoseSeq(pub Vec<Pose>);

impl CameraPoseSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `F×12` camera condition.
    pub fn flatten(&self) -> Result<Tensor> {
        let data = self.0.iter().flat_map(|p| p.flatten()).collect();
        Tensor::new(vec![self.0.len(), POSE_DIM], data)
    }

    pub fn unflatten(t: &Tensor) -> Result<Self> {
        if t.ndim() != 2 || t.shape()[1] != POSE_DIM {
            return Err(Error::dim("pose unflatten", format!("expected F×12, got {:?}", t.shape())));
        }
        t.data()
            .chunks(POSE_DIM)
            .map(Pose::unflatten)
            .collect::<Result<Vec<_>>>()
            .map(CameraPoseSeq)
    }

    /// One pose per group of `stride` consecutive frames (trailing partial group dropped).
    pub fn downsample(&self, stride: usize) -> Result<CameraPoseSeq> {
        self.0
            .chunks_exact(stride)
            .map(Pose::average)
            .collect::<Result<Vec<_>>>()
            .map(CameraPoseSeq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_rows_are_unit() {
        let p = Pose::with_yaw(3.0, 4.0, 0.7);
        for row in p.rotation {
            let n: f64 = row.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flatten_order() {
        let p = Pose::identity_at(5.0, 6.0);
        let f = p.flatten();
        assert_eq!(&f[..9], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&f[9..], &[5.0, 6.0, 0.0]);
    }

    #[test]
    fn unflatten_recovers_exactly() {
        let seq = CameraPoseSeq(vec![Pose::with_yaw(1.5, -2.25, 0.3), Pose::identity_at(8.0, 9.0)]);
        let back = CameraPoseSeq::unflatten(&seq.flatten().unwrap()).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn downsample_averages_translation() {
        let seq = CameraPoseSeq((0..8).map(|i| Pose::identity_at(i as f64, 0.0)).collect());
        let d = seq.downsample(4).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.0[0].center(), (1.5, 0.0));
        assert_eq!(d.0[1].center(), (5.5, 0.0));
    }
}
