//! Static background textures.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::Tensor;

const SCENE_SALT: u64 = 0x5ce_e5ce_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneStyle {
    Regions,
    Bands,
    Tiles,
    Blobs,
}

impl SceneStyle {
    fn for_id(id: usize) -> Self {
        [Self::Regions, Self::Bands, Self::Tiles, Self::Blobs][id % 4]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: usize,
    pub style: SceneStyle,
    /// `3×H×W`, values in `[0, 1]`.
    pub background: Tensor,
}

/// Desaturated color so subjects stay distinguishable from the backdrop.
fn muted(r: &mut rng::Rng) -> [f64; 3] {
    let base = r.random_range(0.3..0.62);
    std::array::from_fn(|_| base + r.random_range(-0.09..0.09))
}

impl Scene {
    /// Texture is a pure function of `scene_id` and the extents.
    pub fn generate(scene_id: usize, width: usize, height: usize) -> Scene {
        let mut r = rng::seeded(rng::derive(SCENE_SALT, scene_id as u64));
        let style = SceneStyle::for_id(scene_id);
        let (wf, hf) = (width as f64, height as f64);
        let color: Box<dyn Fn(usize, usize) -> [f64; 3]> = match style {
            SceneStyle::Regions => {
                let n = r.random_range(6..10);
                let seeds: Vec<(f64, f64, [f64; 3])> = (0..n)
                    .map(|_| (r.random_range(0.0..wf), r.random_range(0.0..hf), muted(&mut r)))
                    .collect();
                Box::new(move |x, y| {
                    let (px, py) = (x as f64, y as f64);
                    let nearest = seeds
                        .iter()
                        .min_by(|a, b| {
                            let da = (a.0 - px).powi(2) + (a.1 - py).powi(2);
                            let db = (b.0 - px).powi(2) + (b.1 - py).powi(2);
                            da.total_cmp(&db)
                        })
                        .expect("at least one seed");
                    nearest.2
                })
            }
            SceneStyle::Bands => {
                let mut bands = Vec::new();
                let mut y = 0;
                while y < height {
                    let h = r.random_range(5..13);
                    bands.push((y + h, muted(&mut r)));
                    y += h;
                }
                let tilt = r.random_range(-0.05..0.05);
                Box::new(move |x, y| {
                    let c = bands.iter().find(|b| y < b.0).expect("bands cover the scene").1;
                    let shade = tilt * (x as f64 / wf - 0.5);
                    c.map(|v| v + shade)
                })
            }
            SceneStyle::Tiles => {
                let cell = if r.random_bool(0.5) { 8 } else { 12 };
                let cols = width.div_ceil(cell);
                let rows = height.div_ceil(cell);
                let palette: Vec<[f64; 3]> = (0..cols * rows).map(|_| muted(&mut r)).collect();
                Box::new(move |x, y| palette[(y / cell) * cols + x / cell])
            }
            SceneStyle::Blobs => {
                let a = muted(&mut r);
                let b = muted(&mut r);
                let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
                    .map(|_| {
                        let shift = std::array::from_fn(|_| r.random_range(-0.15..0.15));
                        (r.random_range(0.0..wf), r.random_range(0.0..hf), r.random_range(5.0..10.0), shift)
                    })
                    .collect();
                Box::new(move |x, y| {
                    let (px, py) = (x as f64, y as f64);
                    let t = (px / wf + py / hf) / 2.0;
                    let mut c: [f64; 3] = std::array::from_fn(|i| a[i] * (1.0 - t) + b[i] * t);
                    for &(bx, by, rad, shift) in &blobs {
                        let k = (-((px - bx).powi(2) + (py - by).powi(2)) / (2.0 * rad * rad)).exp();
                        for i in 0..3 {
                            c[i] += k * shift[i];
                        }
                    }
                    c
                })
            }
        };
        let mut data = vec![0.0; 3 * width * height];
        for y in 0..height {
            for x in 0..width {
                let c = color(x, y);
                for ch in 0..3 {
                    data[(ch * height + y) * width + x] = c[ch].clamp(0.0, 1.0);
                }
            }
        }
        Scene {
            scene_id,
            style,
            background: Tensor::new(vec![3, height, width], data).expect("extents match data"),
        }
    }

    pub fn width(&self) -> usize {
        self.background.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.background.shape()[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_depends_only_on_id() {
        assert_eq!(Scene::generate(5, 32, 24), Scene::generate(5, 32, 24));
        assert_ne!(Scene::generate(5, 32, 24).background, Scene::generate(6, 32, 24).background);
    }

    #[test]
    fn values_in_unit_range() {
        for id in 0..8 {
            let s = Scene::generate(id, 20, 20);
            assert!(s.background.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
