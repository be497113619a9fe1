//! The two codec variants: a factorized prior over the latents, and a scale
//! hyperprior that transmits side information to predict per-element scales.

pub mod arch;
pub mod checkpoint;
pub mod msssim;
pub mod transforms;

pub use arch::{Architecture, DistortionKind, ModelKind};

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::param::ParamStore;
use crate::density::{ChainParams, DensityBank, IntervalMass, NoisyDensity, LIKELIHOOD_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use transforms::Layer;

/// Initial scale of the per-channel densities.
const DENSITY_INIT_SCALE: f64 = 10.0;

/// Counter-based uniform noise: the draw for a tensor depends only on the
/// seed, the step and the tensor's id.
#[derive(Clone, Copy, Debug)]
pub struct NoiseSource {
    pub seed: u64,
    pub step: u64,
}

impl NoiseSource {
    pub fn new(seed: u64, step: u64) -> Self {
        Self { seed, step }
    }

    /// `U(-½, ½)` samples of the given shape.
    pub fn uniform<T: Scalar>(&self, tensor_id: u64, shape: &[usize]) -> Tensor<T> {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.step.to_le_bytes());
        key[16..24].copy_from_slice(&tensor_id.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        Tensor::from_fn(shape, |_| T::of(rng.gen_range(-0.5..0.5)))
    }
}

/// Training perturbs latents with uniform noise; inference rounds them.
#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Noise(NoiseSource),
    Quantize,
}

const Y_NOISE: u64 = 1;
const Z_NOISE: u64 = 2;

/// Adds uniform noise or rounds (ties away from zero).
pub fn perturb_or_quantize<T: Scalar>(v: &Tensor<T>, mode: Mode, tensor_id: u64) -> Tensor<T> {
    match mode {
        Mode::Noise(src) => v.zip_map(&src.uniform(tensor_id, v.shape()), |a, u| a + u),
        Mode::Quantize => v.map(|a| a.round()),
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub reconstruction: Var,
    pub y: Var,
    pub y_tilde: Var,
    pub z_tilde: Option<Var>,
    pub scales: Option<Var>,
    /// Total bits of the latents, and of the side information.
    pub rate_y: Var,
    pub rate_z: Option<Var>,
    pub distortion: Var,
    pub loss: Var,
    pub pixels: usize,
}

/// Scalar summary of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub bpp_y: f64,
    pub bpp_z: f64,
    pub distortion: f64,
}

impl ForwardOutput {
    pub fn terms<T: Scalar>(&self, g: &Graph<T>) -> LossTerms {
        let px = self.pixels as f64;
        LossTerms {
            loss: g.value(self.loss).item().f64(),
            bpp_y: g.value(self.rate_y).item().f64() / px,
            bpp_z: self.rate_z.map_or(0.0, |r| g.value(r).item().f64() / px),
            distortion: g.value(self.distortion).item().f64(),
        }
    }
}

/// Quantized latents of one image batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents<T: Scalar = f32> {
    pub y_hat: Tensor<T>,
    pub z_hat: Option<Tensor<T>>,
    /// Scales predicted from `z_hat`.
    pub scales: Option<Tensor<T>>,
}

/// Effective density parameters in `f64`, shared by rate estimates and the
/// entropy coder.
#[derive(Clone, Debug)]
pub struct Priors {
    pub y: Option<ChainParams>,
    pub z: Option<ChainParams>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub arch: Architecture,
    pub store: ParamStore<T>,
    g_a: Vec<Layer>,
    g_s: Vec<Layer>,
    h_a: Vec<Layer>,
    h_s: Vec<Layer>,
    y_density: Option<DensityBank>,
    z_density: Option<DensityBank>,
}

impl<T: Scalar> Model<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (n, m) = (arch.n, arch.m);
        let g_a = transforms::analysis(&mut store, &mut rng, n, m);
        let g_s = transforms::synthesis(&mut store, &mut rng, n, m);
        let (h_a, h_s, y_density, z_density) = match arch.kind {
            ModelKind::Factorized => {
                let bank = DensityBank::init(
                    &mut store,
                    "y_density",
                    arch.density.clone(),
                    m,
                    DENSITY_INIT_SCALE,
                    &mut rng,
                );
                (Vec::new(), Vec::new(), Some(bank), None)
            }
            ModelKind::Hyperprior => {
                let h_a = transforms::hyper_analysis(&mut store, &mut rng, n, m);
                let h_s = transforms::hyper_synthesis(&mut store, &mut rng, n, m);
                let bank = DensityBank::init(
                    &mut store,
                    "z_density",
                    arch.density.clone(),
                    n,
                    DENSITY_INIT_SCALE,
                    &mut rng,
                );
                (h_a, h_s, None, Some(bank))
            }
        };
        Ok(Self {
            arch,
            store,
            g_a,
            g_s,
            h_a,
            h_s,
            y_density,
            z_density,
        })
    }

    /// Same architecture and parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            store: self.store.cast(),
            g_a: self.g_a.clone(),
            g_s: self.g_s.clone(),
            h_a: self.h_a.clone(),
            h_s: self.h_s.clone(),
            y_density: self.y_density.clone(),
            z_density: self.z_density.clone(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        if h % Architecture::LATENT_STRIDE != 0 || w % Architecture::LATENT_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "input extents {h}x{w} are not multiples of {}",
                Architecture::LATENT_STRIDE
            )));
        }
        Ok(())
    }

    pub fn analysis(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        transforms::run(g, &self.store, &self.g_a, x)
    }

    pub fn synthesis(&self, g: &mut Graph<T>, y_hat: Var) -> Result<Var> {
        transforms::run(g, &self.store, &self.g_s, y_hat)
    }

    pub fn hyper_analysis(&self, g: &mut Graph<T>, y: Var) -> Result<Var> {
        self.require_hyper()?;
        transforms::run(g, &self.store, &self.h_a, y)
    }

    /// Scales for a latent grid of `h × w`, bounded below by `scale_min`.
    pub fn hyper_synthesis(&self, g: &mut Graph<T>, z_hat: Var, h: usize, w: usize) -> Result<Var> {
        self.require_hyper()?;
        let log_scale = transforms::run(g, &self.store, &self.h_s, z_hat)?;
        let log_scale = g.crop(log_scale, h, w)?;
        let scale = g.exp(log_scale);
        Ok(g.lower_bound(scale, T::of(self.arch.scale_min as f64)))
    }

    fn require_hyper(&self) -> Result<()> {
        match self.arch.kind {
            ModelKind::Hyperprior => Ok(()),
            ModelKind::Factorized => Err(Error::Usage("the factorized model has no hyper transforms".into())),
        }
    }

    fn density_params(&self, g: &mut Graph<T>, bank: &DensityBank) -> Vec<Var> {
        bank.ids.iter().map(|&id| g.param(&self.store, id)).collect()
    }

    fn bits(g: &mut Graph<T>, likelihood: Var) -> Var {
        let floored = g.lower_bound(likelihood, T::of(LIKELIHOOD_FLOOR));
        let log = g.log(floored);
        let total = g.sum(log);
        g.scale(total, T::of(-1.0 / LN_2))
    }

    fn perturb(g: &mut Graph<T>, v: Var, mode: Mode, id: u64) -> Var {
        match mode {
            Mode::Noise(src) => {
                let noise = g.input(src.uniform(id, g.value(v).shape()));
                g.add(v, noise).expect("noise has the latent's shape")
            }
            Mode::Quantize => {
                let rounded = g.value(v).map(|a| a.round());
                g.input(rounded)
            }
        }
    }

    /// Rate–distortion loss `bpp + λ·s·D`, where `s` is the distortion's
    /// loss scale. In quantize mode no gradient reaches the analysis side.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<ForwardOutput> {
        self.check_input(g.value(x))?;
        let (b, _, h, w) = g.value(x).dims4()?;
        let pixels = b * h * w;
        let y = self.analysis(g, x)?;
        let y_tilde = Self::perturb(g, y, mode, Y_NOISE);
        let (rate_y, rate_z, z_tilde, scales) = match self.arch.kind {
            ModelKind::Factorized => {
                let bank = self.y_density.as_ref().expect("factorized prior");
                let params = self.density_params(g, bank);
                let lik = g.chain_likelihood(y_tilde, &bank.shape, &params)?;
                (Self::bits(g, lik), None, None, None)
            }
            ModelKind::Hyperprior => {
                let (_, _, yh, yw) = g.value(y).dims4()?;
                let z = self.hyper_analysis(g, y)?;
                let z_tilde = Self::perturb(g, z, mode, Z_NOISE);
                let scales = self.hyper_synthesis(g, z_tilde, yh, yw)?;
                let lik_y = g.gaussian_likelihood(y_tilde, scales)?;
                let bank = self.z_density.as_ref().expect("hyperprior");
                let params = self.density_params(g, bank);
                let lik_z = g.chain_likelihood(z_tilde, &bank.shape, &params)?;
                let rate_z = Self::bits(g, lik_z);
                (Self::bits(g, lik_y), Some(rate_z), Some(z_tilde), Some(scales))
            }
        };
        let reconstruction = self.synthesis(g, y_tilde)?;
        let distortion = distortion(g, x, reconstruction, self.arch.distortion)?;
        let mut rate = rate_y;
        if let Some(rz) = rate_z {
            rate = g.add(rate, rz)?;
        }
        let bpp = g.scale(rate, T::of(1.0 / pixels as f64));
        let weight = self.arch.lambda as f64 * self.arch.distortion.loss_scale();
        let weighted = g.scale(distortion, T::of(weight));
        let loss = g.add(bpp, weighted)?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::Numerical {
                layer: "loss".into(),
                message: format!("non-finite loss {}", g.value(loss).item()),
            });
        }
        Ok(ForwardOutput {
            reconstruction,
            y,
            y_tilde,
            z_tilde,
            scales,
            rate_y,
            rate_z,
            distortion,
            loss,
            pixels,
        })
    }

    /// Quantized latents (and predicted scales) of `x`.
    pub fn encode_latents(&self, x: &Tensor<T>) -> Result<Latents<T>> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = self.analysis(&mut g, xv)?;
        let y_hat = perturb_or_quantize(g.value(y), Mode::Quantize, Y_NOISE);
        match self.arch.kind {
            ModelKind::Factorized => Ok(Latents {
                y_hat,
                z_hat: None,
                scales: None,
            }),
            ModelKind::Hyperprior => {
                let z = self.hyper_analysis(&mut g, y)?;
                let z_hat = perturb_or_quantize(g.value(z), Mode::Quantize, Z_NOISE);
                let (_, _, h, w) = y_hat.dims4()?;
                let scales = self.scales(&z_hat, h, w)?;
                Ok(Latents {
                    y_hat,
                    z_hat: Some(z_hat),
                    scales: Some(scales),
                })
            }
        }
    }

    /// Unquantized latents `y` and, for the hyperprior, `z`.
    pub fn raw_latents(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = self.analysis(&mut g, xv)?;
        let z = match self.arch.kind {
            ModelKind::Factorized => None,
            ModelKind::Hyperprior => {
                let z = self.hyper_analysis(&mut g, y)?;
                Some(g.value(z).clone())
            }
        };
        Ok((g.value(y).clone(), z))
    }

    /// Scales predicted from quantized side information.
    pub fn scales(&self, z_hat: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let z = g.input(z_hat.clone());
        let s = self.hyper_synthesis(&mut g, z, h, w)?;
        Ok(g.value(s).clone())
    }

    pub fn decode_latents(&self, y_hat: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let y = g.input(y_hat.clone());
        let x = self.synthesis(&mut g, y)?;
        Ok(g.value(x).clone())
    }

    pub fn priors(&self) -> Priors {
        Priors {
            y: self.y_density.as_ref().map(|b| b.effective(&self.store)),
            z: self.z_density.as_ref().map(|b| b.effective(&self.store)),
        }
    }

    /// `Σ −log₂ pmf` of quantized latents under the priors the entropy coder
    /// uses: `(bits_y, bits_z)`.
    pub fn latent_bits(&self, latents: &Latents<T>) -> Result<(f64, f64)> {
        let priors = self.priors();
        let bits_y = match (&priors.y, &latents.scales) {
            (Some(p), _) => factorized_bits(p, &latents.y_hat)?,
            (None, Some(s)) => gaussian_bits(&latents.y_hat, s)?,
            (None, None) => return Err(Error::Usage("hyperprior latents lack scales".into())),
        };
        let bits_z = match (&priors.z, &latents.z_hat) {
            (Some(p), Some(z)) => factorized_bits(p, z)?,
            (None, _) => 0.0,
            (Some(_), None) => return Err(Error::Usage("hyperprior latents lack side information".into())),
        };
        Ok((bits_y, bits_z))
    }
}

fn bits_of(p: f64) -> f64 {
    -p.max(LIKELIHOOD_FLOOR).log2()
}

/// Bits of a `[batch, channel, h, w]` tensor under per-channel priors.
pub fn factorized_bits<T: Scalar>(prior: &ChainParams, v: &Tensor<T>) -> Result<f64> {
    let (_, c, h, w) = v.dims4()?;
    if c != prior.channels() {
        return Err(Error::Shape(format!("{c} channels, prior has {}", prior.channels())));
    }
    let channels: Vec<_> = (0..c).map(|i| NoisyDensity::NonParametric(prior.channel(i))).collect();
    Ok(v
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let d = &channels[(i / (h * w)) % c];
            let x = x.f64();
            bits_of(d.mass(x - 0.5, x + 0.5))
        })
        .sum())
}

pub fn gaussian_bits<T: Scalar>(v: &Tensor<T>, scales: &Tensor<T>) -> Result<f64> {
    if v.shape() != scales.shape() {
        return Err(Error::Shape(format!("scales {:?} for latents {:?}", scales.shape(), v.shape())));
    }
    Ok(v
        .data()
        .iter()
        .zip(scales.data())
        .map(|(&x, &s)| NoisyDensity::gaussian(s.f64()).mass(x.f64() - 0.5, x.f64() + 0.5))
        .map(bits_of)
        .sum())
}

/// `D(x, x̂)`: mean squared error on `[0, 1]` pixels, or `1 − MS-SSIM`.
pub fn distortion<T: Scalar>(g: &mut Graph<T>, x: Var, x_hat: Var, kind: DistortionKind) -> Result<Var> {
    match kind {
        DistortionKind::Mse => {
            let d = g.sub(x, x_hat)?;
            let sq = g.mul(d, d)?;
            Ok(g.mean(sq))
        }
        DistortionKind::Msssim => {
            let s = msssim::ms_ssim(g, x, x_hat)?;
            let neg = g.scale(s, T::of(-1.0));
            Ok(g.offset(neg, T::one()))
        }
    }
}
