//! Lossless space-time patchification.
//!
//! Each `4 × p × p` block of a `C×F×H×W` video becomes one latent cell with
//! `C·4·p²` channels, so the latent grid is `C·4·p² × F/4 × H/p × W/p`. The
//! mapping is a pure permutation of values: encode and decode are exact
//! inverses and preserve every statistic of the data.
//!
//! Latent channel order is `((c·4 + dt)·p + dy)·p + dx`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TEMPORAL_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Codec {
    pub spatial_stride: usize,
}

/// Encoded video.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub values: Tensor,
    pub temporal_stride: usize,
    pub spatial_stride: usize,
}

impl LatentGrid {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.values.shape()[2], self.values.shape()[3])
    }
}

impl Default for Codec {
    fn default() -> Self {
        Self { spatial_stride: 2 }
    }
}

impl Codec {
    pub fn new(spatial_stride: usize) -> Result<Self> {
        if spatial_stride == 0 {
            return Err(Error::Config("codec spatial stride must be ≥ 1".into()));
        }
        Ok(Self { spatial_stride })
    }

    pub fn latent_channels(&self, video_channels: usize) -> usize {
        video_channels * TEMPORAL_STRIDE * self.spatial_stride * self.spatial_stride
    }

    /// Latent shape for a `C×F×H×W` video, or a config error when extents
    /// are not divisible by the strides.
    pub fn latent_shape(&self, video_shape: &[usize]) -> Result<[usize; 4]> {
        let p = self.spatial_stride;
        let &[c, f, h, w] = video_shape else {
            return Err(Error::dim("codec encode", format!("expected C×F×H×W, got {video_shape:?}")));
        };
        if f % TEMPORAL_STRIDE != 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Config(format!(
                "video {video_shape:?} not divisible by temporal stride {TEMPORAL_STRIDE} and spatial stride {p}"
            )));
        }
        Ok([self.latent_channels(c), f / TEMPORAL_STRIDE, h / p, w / p])
    }

    pub fn encode(&self, video: &Tensor) -> Result<LatentGrid> {
        let p = self.spatial_stride;
        let [cl, f, h, w] = self.latent_shape(video.shape())?;
        let c = video.shape()[0];
        // [C, f, 4, h, p, w, p] -> [C, 4, p(y), p(x), f, h, w]
        let split = video.reshape(&[c, f, TEMPORAL_STRIDE, h, p, w, p])?;
        let values = split.permute(&[0, 2, 4, 6, 1, 3, 5])?.reshape(&[cl, f, h, w])?;
        Ok(LatentGrid {
            values,
            temporal_stride: TEMPORAL_STRIDE,
            spatial_stride: p,
        })
    }

    pub fn decode(&self, latent: &LatentGrid) -> Result<Tensor> {
        if latent.spatial_stride != self.spatial_stride || latent.temporal_stride != TEMPORAL_STRIDE {
            return Err(Error::dim(
                "codec decode",
                format!(
                    "latent strides ({}, {}) do not match codec ({TEMPORAL_STRIDE}, {})",
                    latent.temporal_stride, latent.spatial_stride, self.spatial_stride
                ),
            ));
        }
        self.decode_values(&latent.values)
    }

    /// Decodes a raw `C'×f×h×w` latent tensor.
    pub fn decode_values(&self, values: &Tensor) -> Result<Tensor> {
        let p = self.spatial_stride;
        let &[cl, f, h, w] = values.shape() else {
            return Err(Error::dim("codec decode", format!("expected C'×f×h×w, got {:?}", values.shape())));
        };
        let block = TEMPORAL_STRIDE * p * p;
        if cl % block != 0 {
            return Err(Error::dim(
                "codec decode",
                format!("channel count {cl} is not a multiple of 4·p² = {block}"),
            ));
        }
        let c = cl / block;
        let split = values.reshape(&[c, TEMPORAL_STRIDE, p, p, f, h, w])?;
        // inverse of [0, 2, 4, 6, 1, 3, 5]
        split
            .permute(&[0, 4, 1, 5, 2, 6, 3])?
            .reshape(&[c, f * TEMPORAL_STRIDE, h * p, w * p])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn shape_arithmetic() {
        let codec = Codec::new(2).unwrap();
        let video = Tensor::zeros(&[3, 8, 16, 16]);
        let lat = codec.encode(&video).unwrap();
        assert_eq!(lat.values.shape(), &[48, 2, 8, 8]);
        assert_eq!(lat.frames(), 2);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let codec = Codec::new(2).unwrap();
        let video = Tensor::randn(&[3, 8, 6, 4], 1.0, &mut rng::seeded(3));
        let back = codec.decode(&codec.encode(&video).unwrap()).unwrap();
        assert_eq!(back, video);
    }

    #[test]
    fn cell_layout() {
        let codec = Codec::new(2).unwrap();
        let video = Tensor::from_fn(&[2, 4, 4, 4], |i| i as f64);
        let lat = codec.encode(&video).unwrap();
        // channel ((c·4+dt)·2+dy)·2+dx at cell (0, y, x)
        for (c, dt, dy, dx, y, x) in [(1, 3, 1, 0, 1, 1), (0, 2, 0, 1, 0, 1)] {
            let ch = ((c * 4 + dt) * 2 + dy) * 2 + dx;
            assert_eq!(
                lat.values.at(&[ch, 0, y, x]),
                video.at(&[c, dt, 2 * y + dy, 2 * x + dx])
            );
        }
    }

    #[test]
    fn constant_video_gives_constant_latent() {
        let codec = Codec::new(2).unwrap();
        let lat = codec.encode(&Tensor::full(&[3, 4, 4, 4], 0.3)).unwrap();
        assert!(lat.values.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn divisibility_is_config_error() {
        let codec = Codec::new(2).unwrap();
        assert!(matches!(codec.encode(&Tensor::zeros(&[3, 6, 4, 4])), Err(Error::Config(_))));
        assert!(matches!(codec.encode(&Tensor::zeros(&[3, 4, 5, 4])), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_channels_is_dimension_error() {
        let codec = Codec::new(2).unwrap();
        let err = codec.decode_values(&Tensor::zeros(&[47, 1, 2, 2])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
