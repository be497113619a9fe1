//! Latent visualizations and side-information accounting for one image.
//!
//! [`write_diagnostics`] produces, per latent channel `c`:
//! `y_c.pgm`, `sigma_c.pgm` and `normalized_c.pgm` (each plane stretched to
//! the full gray range), `latents.csv` with the raw values
//! (`channel,row,col,y,sigma,normalized`) and `rate.csv` holding the
//! `bpp_total,bpp_side` pair.

use std::io::Write;
use std::path::Path;

use image::{GrayImage, RgbImage};

use super::Codec;
use crate::error::{Error, Result};
use crate::image_io;
use crate::model::ModelKind;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Diagnostics {
    /// Unquantized latents, `[1, M, h/16, w/16]`.
    pub y: Tensor,
    /// Scales predicted from the transmitted side information.
    pub sigma: Tensor,
    /// `y / σ̂` elementwise.
    pub normalized: Tensor,
    pub bpp_total: f64,
    pub bpp_side: f64,
}

pub fn diagnose(codec: &Codec, img: &RgbImage) -> Result<Diagnostics> {
    if codec.model.arch.kind != ModelKind::Hyperprior {
        return Err(Error::Usage("diagnostics need a hyperprior checkpoint".into()));
    }
    let out = codec.compress(img)?;
    let padded = image_io::pad_replicate(&image_io::from_rgb8(img), codec.model.arch.block())?;
    let (y, _) = codec.model.raw_latents(&padded)?;
    let sigma = out.latents.scales.expect("hyperprior latents carry scales");
    let normalized = y.zip_map(&sigma, |a, s| a / s);
    let pixels = f64::from(img.width()) * f64::from(img.height());
    Ok(Diagnostics {
        y,
        sigma,
        normalized,
        bpp_total: out.bytes.len() as f64 * 8.0 / pixels,
        bpp_side: out.container.side.len() as f64 * 8.0 / pixels,
    })
}

/// Pooled lag-1 autocorrelation over horizontal and vertical neighbours,
/// with each channel centred on its own mean.
pub fn lag1_autocorrelation(t: &Tensor) -> Result<f64> {
    let (b, c, h, w) = t.dims4()?;
    let d = t.data();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for plane in d.chunks(h * w).take(b * c) {
        let mean = plane.iter().map(|&v| f64::from(v)).sum::<f64>() / (h * w) as f64;
        let at = |y: usize, x: usize| f64::from(plane[y * w + x]) - mean;
        for y in 0..h {
            for x in 0..w {
                let v = at(y, x);
                den += v * v;
                if x + 1 < w {
                    num += v * at(y, x + 1) / 2.0;
                }
                if y + 1 < h {
                    num += v * at(y + 1, x) / 2.0;
                }
            }
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// `v` with `digits` significant digits and no trailing zeros.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

/// The `bpp_total,bpp_side` row, e.g. `0.1135,0.00527`.
pub fn rate_row(bpp_total: f64, bpp_side: f64) -> String {
    format!("{},{}", format_significant(bpp_total, 4), format_significant(bpp_side, 4))
}

fn plane_image(t: &Tensor, channel: usize) -> Result<GrayImage> {
    let (_, _, h, w) = t.dims4()?;
    let plane = &t.data()[channel * h * w..(channel + 1) * h * w];
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let raw = plane.iter().map(|&v| image_io::quantize8((v - lo) / span)).collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, raw).expect("plane matches dimensions"))
}

pub fn write_diagnostics(diag: &Diagnostics, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (_, c, h, w) = diag.y.dims4()?;
    for ch in 0..c {
        for (name, t) in [("y", &diag.y), ("sigma", &diag.sigma), ("normalized", &diag.normalized)] {
            let path = dir.join(format!("{name}_{ch}.pgm"));
            plane_image(t, ch)?.save(&path).map_err(|source| Error::Image { path, source })?;
        }
    }
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("latents.csv"))?);
    writeln!(csv, "channel,row,col,y,sigma,normalized")?;
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                writeln!(
                    csv,
                    "{ch},{row},{col},{},{},{}",
                    diag.y.at4(0, ch, row, col),
                    diag.sigma.at4(0, ch, row, col),
                    diag.normalized.at4(0, ch, row, col)
                )?;
            }
        }
    }
    csv.flush()?;
    std::fs::write(
        dir.join("rate.csv"),
        format!("bpp_total,bpp_side\n{}\n", rate_row(diag.bpp_total, diag.bpp_side)),
    )?;
    Ok(())
}
