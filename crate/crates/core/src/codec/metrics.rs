//! Rate and quality measurements on 8-bit images.

use std::io::Write;

use image::RgbImage;

use super::container::HEADER_LEN;
use super::Codec;
use crate::error::{Error, Result};
use crate::image_io;
use crate::model::msssim::ms_ssim_value;
use crate::model::{DistortionKind, ModelKind};
use crate::tensor::Tensor;

/// PSNR of identical images, and the ceiling of the dB MS-SSIM scale.
pub const DB_CAP: f64 = 99.0;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        DB_CAP
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(DB_CAP)
    }
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(image_io::mse8(a, b)?))
}

fn planes(img: &RgbImage) -> Tensor<f64> {
    image_io::from_rgb8(img).cast()
}

/// MS-SSIM on `[0, 1]` intensities.
pub fn ms_ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dimensions(), b.dimensions())));
    }
    ms_ssim_value(&planes(a), &planes(b))
}

/// `−10 log₁₀(1 − d)`, which spreads out values close to 1.
pub fn msssim_db(d: f64) -> f64 {
    if d >= 1.0 {
        DB_CAP
    } else {
        (-10.0 * (1.0 - d).log10()).min(DB_CAP)
    }
}

/// Rate and quality of one compressed image. Rates count every byte of the
/// file: `bpp_total` includes the header.
#[derive(Clone, Debug, PartialEq)]
pub struct RdRecord {
    pub image: String,
    pub bpp_total: f64,
    pub bpp_side: f64,
    pub bpp_latents: f64,
    /// Fixed container overhead; `bpp_side + bpp_latents + bpp_header` is
    /// exactly `bpp_total`.
    pub bpp_header: f64,
    pub psnr: f64,
    pub msssim: f64,
    pub msssim_db: f64,
}

pub fn measure(codec: &Codec, name: &str, img: &RgbImage) -> Result<RdRecord> {
    let out = codec.compress(img)?;
    let decoded = codec.decompress(&out.bytes)?;
    let pixels = f64::from(img.width()) * f64::from(img.height());
    let msssim = ms_ssim(img, &decoded.image)?;
    Ok(RdRecord {
        image: name.to_owned(),
        bpp_total: out.bytes.len() as f64 * 8.0 / pixels,
        bpp_side: out.container.side.len() as f64 * 8.0 / pixels,
        bpp_latents: out.container.latents.len() as f64 * 8.0 / pixels,
        bpp_header: header_bpp(pixels),
        psnr: psnr(img, &decoded.image)?,
        msssim,
        msssim_db: msssim_db(msssim),
    })
}

/// Header bits per pixel for an image of `pixels` pixels.
pub fn header_bpp(pixels: f64) -> f64 {
    HEADER_LEN as f64 * 8.0 / pixels
}

/// Per-image records of one model over a set of named images.
pub fn evaluate(codec: &Codec, images: &[(String, RgbImage)]) -> Result<Vec<RdRecord>> {
    images.iter().map(|(name, img)| measure(codec, name, img)).collect()
}

/// Arithmetic mean of every field, labelled `mean`.
pub fn mean_record(records: &[RdRecord]) -> RdRecord {
    let n = records.len().max(1) as f64;
    let avg = |f: fn(&RdRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let msssim = avg(|r| r.msssim);
    RdRecord {
        image: "mean".into(),
        bpp_total: avg(|r| r.bpp_total),
        bpp_side: avg(|r| r.bpp_side),
        bpp_latents: avg(|r| r.bpp_latents),
        bpp_header: avg(|r| r.bpp_header),
        psnr: avg(|r| r.psnr),
        msssim,
        msssim_db: msssim_db(msssim),
    }
}

pub const RD_HEADER: &str = "kind,distortion,lambda,image,bpp_total,bpp_side,bpp_latents,bpp_header,psnr,msssim,msssim_db";

/// One CSV row per record, prefixed with the model it came from.
pub fn write_rd_rows<W: Write>(
    out: &mut W,
    kind: ModelKind,
    distortion: DistortionKind,
    lambda: f32,
    records: &[RdRecord],
) -> Result<()> {
    for r in records {
        writeln!(
            out,
            "{kind},{distortion},{lambda},{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.6},{:.4}",
            r.image, r.bpp_total, r.bpp_side, r.bpp_latents, r.bpp_header, r.psnr, r.msssim, r.msssim_db
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_known_error() {
        assert!((psnr_from_mse(65.025) - 30.0).abs() < 1e-9);
        assert_eq!(psnr_from_mse(0.0), DB_CAP);
        let a = RgbImage::from_pixel(4, 4, image::Rgb([100, 100, 100]));
        let b = RgbImage::from_pixel(4, 4, image::Rgb([110, 100, 100]));
        let expected = 10.0 * (255.0f64.powi(2) / (100.0 / 3.0)).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), DB_CAP);
    }

    #[test]
    fn msssim_db_scale() {
        assert!((msssim_db(0.9) - 10.0).abs() < 1e-9);
        assert!((msssim_db(0.99) - 20.0).abs() < 1e-9);
        assert_eq!(msssim_db(1.0), DB_CAP);
    }

    #[test]
    fn identical_images_score_one() {
        let a = RgbImage::from_fn(64, 64, |x, y| image::Rgb([(x * 4) as u8, (y * 4) as u8, 7]));
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_averages_fields() {
        let r = |bpp: f64, msssim: f64| RdRecord {
            image: "x".into(),
            bpp_total: bpp,
            bpp_side: 0.0,
            bpp_latents: bpp,
            bpp_header: 0.0,
            psnr: 30.0,
            msssim,
            msssim_db: msssim_db(msssim),
        };
        let m = mean_record(&[r(0.2, 0.9), r(0.4, 0.95)]);
        assert!((m.bpp_total - 0.3).abs() < 1e-12);
        assert!((m.msssim - 0.925).abs() < 1e-12);
        assert_eq!(m.image, "mean");
    }
}
