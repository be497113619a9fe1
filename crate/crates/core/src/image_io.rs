//! Conversion between 8-bit RGB files and `[1, 3, h, w]` tensors in `[0, 1]`.

use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn from_rgb8(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        f32::from(raw[p * 3 + c]) / 255.0
    })
}

/// Rounds to 8 bits after clamping to `[0, 1]`. Uses the first batch item.
pub fn to_rgb8(t: &Tensor) -> Result<RgbImage> {
    let (_, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let d = t.data();
    let mut raw = vec![0u8; h * w * 3];
    for p in 0..h * w {
        for ch in 0..3 {
            raw[p * 3 + ch] = quantize8(d[ch * h * w + p]);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions"))
}

pub fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_rgb8(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn load_rgb(path: &Path) -> Result<Tensor> {
    Ok(from_rgb8(&load_rgb8(path)?))
}

/// Format follows the extension (`.png`, `.ppm`, …).
pub fn save_rgb8(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Pads every plane on the bottom and right to multiples of `block` by
/// repeating the last row and column.
pub fn pad_replicate(t: &Tensor, block: usize) -> Result<Tensor> {
    let (b, c, h, w) = t.dims4()?;
    let (ph, pw) = (h.div_ceil(block) * block, w.div_ceil(block) * block);
    let d = t.data();
    Ok(Tensor::from_fn(&[b, c, ph, pw], |i| {
        let plane = i / (ph * pw);
        let (y, x) = ((i / pw) % ph, i % pw);
        d[plane * h * w + y.min(h - 1) * w + x.min(w - 1)]
    }))
}

/// Mean squared error and PSNR between 8-bit images of equal size.
pub fn mse8(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dimensions(), b.dimensions())));
    }
    let total: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(total / a.as_raw().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_intensity_maps_to_one() {
        let img = RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 51]));
        let t = from_rgb8(&img);
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        assert_eq!(t.at4(0, 0, 1, 1), 1.0);
        assert_eq!(t.at4(0, 1, 0, 0), 0.0);
        assert!((t.at4(0, 2, 0, 1) - 0.2).abs() < 1e-7);
        assert_eq!(to_rgb8(&t).unwrap(), img);
    }

    #[test]
    fn padding_repeats_edges() {
        let t = Tensor::from_fn(&[1, 1, 2, 3], |i| i as f32);
        let p = pad_replicate(&t, 4).unwrap();
        assert_eq!(p.shape(), &[1, 1, 4, 4]);
        assert_eq!(p.at4(0, 0, 3, 3), 5.0);
        assert_eq!(p.at4(0, 0, 0, 3), 2.0);
        assert_eq!(p.crop(2, 3).unwrap(), t);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 40, y as u8 * 70, 9]));
        for ext in ["png", "ppm"] {
            let path = dir.path().join(format!("a.{ext}"));
            save_rgb8(&path, &img).unwrap();
            assert_eq!(load_rgb8(&path).unwrap(), img);
        }
    }
}
