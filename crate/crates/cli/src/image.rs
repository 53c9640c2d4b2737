//! PNG output for inspecting predicted frames.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use hydra_core::Tensor;

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Frame `f` of a `3×F×H×W` video with `[0, 1]` values, each pixel
/// repeated `scale` times in both directions.
pub fn frame_rgb(video: &Tensor, f: usize, scale: usize) -> Result<Rgb> {
    let &[c, nf, h, w] = video.shape() else {
        anyhow::bail!("expected a 3×F×H×W video, got {:?}", video.shape());
    };
    ensure!(c == 3 && f < nf && scale >= 1, "frame {f} of video {:?}", video.shape());
    let (sh, sw) = (h * scale, w * scale);
    let mut data = Vec::with_capacity(sh * sw * 3);
    for y in 0..sh {
        for x in 0..sw {
            for ch in 0..3 {
                data.push(quantize(video.at(&[ch, f, y / scale, x / scale])));
            }
        }
    }
    Ok(Rgb {
        width: sw,
        height: sh,
        data,
    })
}

/// Images placed left to right, separated by `gap` white columns.
pub fn side_by_side(images: &[Rgb], gap: usize) -> Result<Rgb> {
    let height = images.first().map_or(0, |i| i.height);
    ensure!(images.iter().all(|i| i.height == height), "images differ in height");
    let width = images.iter().map(|i| i.width).sum::<usize>() + gap * images.len().saturating_sub(1);
    let mut data = vec![255u8; width * height * 3];
    let mut x0 = 0;
    for img in images {
        for y in 0..height {
            let src = &img.data[y * img.width * 3..(y + 1) * img.width * 3];
            let dst = (y * width + x0) * 3;
            data[dst..dst + src.len()].copy_from_slice(src);
        }
        x0 += img.width + gap;
    }
    Ok(Rgb { width, height, data })
}

pub fn write_png(path: &Path, img: &Rgb) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().with_context(|| format!("writing {}", path.display()))?;
    w.write_image_data(&img.data)
        .with_context(|| format!("writing {}", path.display()))?;
    w.finish().with_context(|| format!("finishing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_and_layout() {
        let v = Tensor::from_fn(&[3, 1, 1, 2], |i| if i % 2 == 0 { 0.0 } else { 1.0 });
        let img = frame_rgb(&v, 0, 2).unwrap();
        assert_eq!((img.width, img.height), (4, 2));
        assert_eq!(&img.data[..12], &[0, 0, 0, 0, 0, 0, 255, 255, 255, 255, 255, 255]);
        let both = side_by_side(&[img.clone(), img], 1).unwrap();
        assert_eq!(both.width, 9);
        assert_eq!(&both.data[12..15], &[255, 255, 255]);
    }
}
