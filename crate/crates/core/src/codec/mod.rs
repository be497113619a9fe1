//! Image compression with a trained model: quantize, entropy code, and
//! package the streams; plus the inverse.

pub mod container;
pub mod diagnostics;
pub mod metrics;

use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;

use crate::coder::{decode_symbol, derive_range, encode_symbol, Decoder, Encoder, SymbolRange};
use crate::density::{ChainParams, NoisyDensity};
use crate::error::{Error, Result};
use crate::image_io;
use crate::model::checkpoint;
use crate::model::{Architecture, Latents, Model, ModelKind, Priors};
use crate::tensor::Tensor;
use container::{check_dimensions, Container, Header};

/// A loaded model with its entropy-coding tables.
pub struct Codec {
    pub model: Model,
    hash: [u8; 8],
    priors: Priors,
    y_ranges: Option<Vec<SymbolRange>>,
    z_ranges: Option<Vec<SymbolRange>>,
}

/// Output of [`Codec::compress`], with the encoder-side view of the result.
#[derive(Clone, Debug)]
pub struct Compressed {
    pub bytes: Vec<u8>,
    pub container: Container,
    /// Latents as transmitted, after clamping into the coder's ranges.
    pub latents: Latents,
    pub reconstruction: RgbImage,
    /// `Σ −log₂ pmf` of the transmitted latents and side information.
    pub model_bits_y: f64,
    pub model_bits_z: f64,
}

#[derive(Clone, Debug)]
pub struct Decompressed {
    pub image: RgbImage,
    pub latents: Latents,
}

fn channel_ranges(prior: &ChainParams) -> Vec<SymbolRange> {
    (0..prior.channels())
        .map(|c| derive_range(&NoisyDensity::NonParametric(prior.channel(c))))
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-element ranges for Gaussian priors, memoized by scale.
struct GaussianRanges(HashMap<u32, SymbolRange>);

impl GaussianRanges {
    fn get(&mut self, scale: f32) -> SymbolRange {
        *self
            .0
            .entry(scale.to_bits())
            .or_insert_with(|| derive_range(&NoisyDensity::gaussian(scale as f64)))
    }
}

impl Codec {
    pub fn new(model: Model) -> Self {
        let hash = checkpoint::model_hash(&model);
        let priors = model.priors();
        let y_ranges = priors.y.as_ref().map(channel_ranges);
        let z_ranges = priors.z.as_ref().map(channel_ranges);
        Self {
            model,
            hash,
            priors,
            y_ranges,
            z_ranges,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(checkpoint::load(path)?.0))
    }

    pub fn model_hash(&self) -> [u8; 8] {
        self.hash
    }

    /// Clamps `v` channel by channel into `ranges`.
    fn clamp_channels(v: &mut Tensor, ranges: &[SymbolRange]) -> Result<()> {
        let (_, c, h, w) = v.dims4()?;
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = ranges[(i / (h * w)) % c].clamp(*x as i64) as f32;
        }
        Ok(())
    }

    fn code_channels(enc: &mut Encoder, v: &Tensor, prior: &ChainParams, ranges: &[SymbolRange]) -> Result<()> {
        let (_, c, h, w) = v.dims4()?;
        let densities: Vec<_> = (0..c).map(|k| NoisyDensity::NonParametric(prior.channel(k))).collect();
        for (i, &x) in v.data().iter().enumerate() {
            let k = (i / (h * w)) % c;
            encode_symbol(enc, x as i64, &densities[k], ranges[k]);
        }
        Ok(())
    }

    fn decode_channels(dec: &mut Decoder<'_>, shape: &[usize], prior: &ChainParams, ranges: &[SymbolRange]) -> Result<Tensor> {
        let (c, plane) = (shape[1], shape[2] * shape[3]);
        let densities: Vec<_> = (0..c).map(|k| NoisyDensity::NonParametric(prior.channel(k))).collect();
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let k = (i / plane) % c;
            out.push(decode_symbol(dec, &densities[k], ranges[k])? as f32);
        }
        Tensor::new(shape, out)
    }

    pub fn compress(&self, img: &RgbImage) -> Result<Compressed> {
        check_dimensions(img.width().into(), img.height().into())?;
        let x = image_io::from_rgb8(img);
        let block = self.model.arch.block();
        let padded = image_io::pad_replicate(&x, block)?;
        let (_, _, ph, pw) = padded.dims4()?;
        let (y, z) = self.model.raw_latents(&padded)?;
        let mut y_hat = y.map(|v| v.round());
        let (_, _, yh, yw) = y_hat.dims4()?;
        let mut side = Vec::new();
        let mut latents_enc = Encoder::new();
        let (z_hat, scales) = match self.model.arch.kind {
            ModelKind::Factorized => {
                let ranges = self.y_ranges.as_ref().expect("factorized prior");
                Self::clamp_channels(&mut y_hat, ranges)?;
                Self::code_channels(&mut latents_enc, &y_hat, self.priors.y.as_ref().expect("prior"), ranges)?;
                (None, None)
            }
            ModelKind::Hyperprior => {
                let z_ranges = self.z_ranges.as_ref().expect("hyperprior");
                let mut z_hat = z.expect("hyperprior latents").map(|v| v.round());
                Self::clamp_channels(&mut z_hat, z_ranges)?;
                let mut side_enc = Encoder::new();
                Self::code_channels(&mut side_enc, &z_hat, self.priors.z.as_ref().expect("prior"), z_ranges)?;
                side = side_enc.finish();
                let scales = self.model.scales(&z_hat, yh, yw)?;
                let mut cache = GaussianRanges(HashMap::new());
                for (v, &s) in y_hat.data_mut().iter_mut().zip(scales.data()) {
                    let range = cache.get(s);
                    *v = range.clamp(*v as i64) as f32;
                    encode_symbol(&mut latents_enc, *v as i64, &NoisyDensity::gaussian(s as f64), range);
                }
                (Some(z_hat), Some(scales))
            }
        };
        let latents = Latents { y_hat, z_hat, scales };
        let (model_bits_y, model_bits_z) = self.model.latent_bits(&latents)?;
        let reconstruction = self.reconstruct(&latents.y_hat, img.width() as usize, img.height() as usize)?;
        let container = Container {
            header: Header {
                kind: self.model.arch.kind,
                distortion: self.model.arch.distortion,
                lambda: self.model.arch.lambda,
                model_hash: self.hash,
                width: img.width(),
                height: img.height(),
                padded_width: pw as u32,
                padded_height: ph as u32,
            },
            side,
            latents: latents_enc.finish(),
        };
        Ok(Compressed {
            bytes: container.to_bytes(),
            container,
            latents,
            reconstruction,
            model_bits_y,
            model_bits_z,
        })
    }

    fn reconstruct(&self, y_hat: &Tensor, width: usize, height: usize) -> Result<RgbImage> {
        let x_hat = self.model.decode_latents(y_hat)?.crop(height, width)?;
        image_io::to_rgb8(&x_hat)
    }

    pub fn decompress(&self, bytes: &[u8]) -> Result<Decompressed> {
        let c = Container::from_bytes(bytes)?;
        let h = &c.header;
        if h.model_hash != self.hash {
            return Err(Error::ModelMismatch {
                stream: hex(&h.model_hash),
                checkpoint: hex(&self.hash),
            });
        }
        if h.kind != self.model.arch.kind {
            return Err(Error::CorruptStream("model kind differs from the checkpoint".into()));
        }
        let block = self.model.arch.block() as u32;
        if h.padded_width % block != 0
            || h.padded_height % block != 0
            || h.padded_width - h.width >= block
            || h.padded_height - h.height >= block
        {
            return Err(Error::CorruptStream("inconsistent padded extents".into()));
        }
        let s = Architecture::LATENT_STRIDE;
        let (yh, yw) = (h.padded_height as usize / s, h.padded_width as usize / s);
        let y_shape = [1, self.model.arch.m, yh, yw];
        let mut dec = Decoder::new(&c.latents)?;
        let (y_hat, z_hat, scales) = match self.model.arch.kind {
            ModelKind::Factorized => {
                let prior = self.priors.y.as_ref().expect("factorized prior");
                let ranges = self.y_ranges.as_ref().expect("ranges");
                (Self::decode_channels(&mut dec, &y_shape, prior, ranges)?, None, None)
            }
            ModelKind::Hyperprior => {
                let t = Architecture::HYPER_STRIDE;
                let z_shape = [1, self.model.arch.n, h.padded_height as usize / t, h.padded_width as usize / t];
                let mut side = Decoder::new(&c.side)?;
                let z_prior = self.priors.z.as_ref().expect("hyperprior");
                let z_ranges = self.z_ranges.as_ref().expect("ranges");
                let z_hat = Self::decode_channels(&mut side, &z_shape, z_prior, z_ranges)?;
                let scales = self.model.scales(&z_hat, yh, yw)?;
                let mut cache = GaussianRanges(HashMap::new());
                let mut y = Vec::with_capacity(scales.len());
                for &s in scales.data() {
                    let range = cache.get(s);
                    y.push(decode_symbol(&mut dec, &NoisyDensity::gaussian(s as f64), range)? as f32);
                }
                (Tensor::new(&y_shape, y)?, Some(z_hat), Some(scales))
            }
        };
        let image = self.reconstruct(&y_hat, h.width as usize, h.height as usize)?;
        Ok(Decompressed {
            image,
            latents: Latents { y_hat, z_hat, scales },
        })
    }
}
