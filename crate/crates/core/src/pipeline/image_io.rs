//! PNG (8/16-bit) and PPM reading, RGB and 16-bit depth writing.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::ndiff::{Array, Graph};

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image { path: path.to_path_buf(), source }
}

/// Load an RGB image as `[3, H, W]` in `[0, 1]`. 16-bit inputs keep their
/// full precision.
pub fn load_rgb(path: &Path) -> Result<Array> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Array::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        f64::from(raw[p * 3 + c]).clamp(0.0, 1.0)
    }))
}

/// Save `[3, H, W]` in `[0, 1]` as an 8-bit RGB PNG (or PPM by extension).
pub fn save_rgb(path: &Path, image: &Array) -> Result<()> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape("save_rgb", format!("{:?} is not 3xHxW", image.shape())));
    };
    let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (image.at(&[c, y as usize, x as usize]).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Save depth `[H, W]` as a 16-bit PNG holding `round(depth · 256)`.
/// Non-positive or non-finite depths are written as 0 (invalid).
pub fn save_depth_png16(path: &Path, depth: &Array) -> Result<()> {
    let &[h, w] = depth.shape() else {
        return Err(Error::shape("save_depth_png16", format!("{:?} is not HxW", depth.shape())));
    };
    let buf = ImageBuffer::<Luma<u16>, _>::from_fn(w as u32, h as u32, |x, y| {
        Luma([encode_depth(depth.at(&[y as usize, x as usize]))])
    });
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn encode_depth(d: f64) -> u16 {
    if d.is_finite() && d > 0.0 {
        (d * 256.0).round().clamp(1.0, f64::from(u16::MAX)) as u16
    } else {
        0
    }
}

/// Load a 16-bit depth PNG (`value / 256`, 0 = invalid) as `[H, W]`.
pub fn load_depth_png16(path: &Path) -> Result<Array> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Array::from_fn(&[h, w], |i| f64::from(raw[i]) / 256.0))
}

/// Bilinear resize of the last two axes (half-pixel centres).
pub fn resize(image: &Array, height: usize, width: usize) -> Result<Array> {
    let s = image.shape();
    if s.len() >= 2 && s[s.len() - 2] == height && s[s.len() - 1] == width {
        return Ok(image.clone());
    }
    let g = Graph::new();
    Ok(g.constant(image.clone()).resize_bilinear(height, width)?.to_array())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let d = Array::from_vec(&[1, 3], vec![0.0, 1.5, 80.0]).unwrap();
        save_depth_png16(&p, &d).unwrap();
        assert_eq!(load_depth_png16(&p).unwrap(), d);
    }

    #[test]
    fn rgb_png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array::from_fn(&[3, 2, 4], |i| (i * 10) as f64 / 255.0);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_rgb(&p, &img).unwrap();
            let back = load_rgb(&p).unwrap();
            assert!(back.zip_map(&img, |a, b| (a - b).abs()).unwrap().max_value() < 1e-6);
        }
    }
}
