//! Checks shared by the integration tests and the acceptance runner.

use hyperprior::codec::Codec;
use hyperprior::coder::{decode_symbol, derive_range, encode_symbol, Decoder, Encoder};
use hyperprior::density::gaussian::{noisy_likelihood, normal_pdf};
use hyperprior::density::{fit_density, ChainShape, FitConfig, Mixture, NoisyDensity, NonParametricDensity};
use hyperprior::model::{Architecture, DistortionKind, Model, ModelKind};
use hyperprior::Result;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug)]
pub struct CoderCost {
    pub symbols: usize,
    pub stream_bytes: usize,
    pub ideal_bits: f64,
}

impl CoderCost {
    pub fn bound_bytes(&self) -> f64 {
        1.01 * self.ideal_bits / 8.0 + 64.0
    }
}

/// Codes `count` symbols, each drawn from the noisy Gaussian PMF of its own
/// scale (log-uniform in `[0.05, 50]`), and decodes them back.
pub fn coder_cost(count: usize, seed: u64) -> Result<CoderCost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Encoder::new();
    let mut items = Vec::with_capacity(count);
    let mut ideal_bits = 0.0;
    for _ in 0..count {
        let sigma = (rng.gen_range(0.05f64.ln()..50f64.ln())).exp();
        let t = sigma * rng.sample::<f64, _>(StandardNormal) + rng.gen_range(-0.5..0.5);
        let pmf = NoisyDensity::gaussian(sigma);
        let range = derive_range(&pmf);
        let n = range.clamp(t.round() as i64);
        ideal_bits -= pmf.pmf(n).log2();
        encode_symbol(&mut enc, n, &pmf, range);
        items.push((sigma, n));
    }
    let bytes = enc.finish();
    let mut dec = Decoder::new(&bytes)?;
    for &(sigma, n) in &items {
        let pmf = NoisyDensity::gaussian(sigma);
        let got = decode_symbol(&mut dec, &pmf, derive_range(&pmf))?;
        assert_eq!(got, n, "symbol decoded incorrectly");
    }
    Ok(CoderCost {
        symbols: count,
        stream_bytes: bytes.len(),
        ideal_bits,
    })
}

/// Composite Simpson rule for the standard normal density on `[a, b]`.
fn simpson_normal(a: f64, b: f64, intervals: usize) -> f64 {
    let (a, b) = (a.max(-40.0), b.min(40.0));
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / intervals as f64;
    let mut s = normal_pdf(a) + normal_pdf(b);
    for i in 1..intervals {
        s += normal_pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

pub const SIGMA_GRID: [f64; 10] = [0.01, 0.05, 0.11, 0.3, 0.5, 1.0, 2.7, 10.0, 50.0, 200.0];

#[derive(Debug)]
pub struct PmfAccuracy {
    /// Largest `|pmf − ∫ pdf|` over the grid, for the coder's and the
    /// training graph's PMF.
    pub max_coder_error: f64,
    pub max_graph_error: f64,
    /// Largest `|Σ pmf − 1|`.
    pub max_sum_error: f64,
}

pub fn pmf_accuracy() -> PmfAccuracy {
    let mut out = PmfAccuracy {
        max_coder_error: 0.0,
        max_graph_error: 0.0,
        max_sum_error: 0.0,
    };
    for &sigma in &SIGMA_GRID {
        let pmf = NoisyDensity::gaussian(sigma);
        let reach = (sigma * 12.0).ceil() as i64 + 2;
        let mut total = 0.0;
        for n in -reach..=reach {
            let integral = simpson_normal((n as f64 - 0.5) / sigma, (n as f64 + 0.5) / sigma, 20_000);
            let p = pmf.pmf(n);
            total += p;
            out.max_coder_error = out.max_coder_error.max((p - integral).abs());
            out.max_graph_error = out
                .max_graph_error
                .max((noisy_likelihood(n as f64, sigma) - integral).abs());
        }
        out.max_sum_error = out.max_sum_error.max((total - 1.0).abs());
    }
    out
}

#[derive(Debug)]
pub struct DensityFits {
    pub uniform_nll: f64,
    pub mixture_nll: f64,
    pub mixture_entropy: f64,
}

pub fn density_fits(seed: u64) -> Result<DensityFits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = FitConfig {
        seed,
        ..FitConfig::default()
    };
    let uniform: Vec<f64> = (0..20_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mut model = NonParametricDensity::new(ChainShape::default(), 10.0, &mut rng);
    let uniform_nll = fit_density(&uniform, &mut model, &config)?.final_nll;

    let mixture = Mixture::three_modes();
    let samples = mixture.sample(&mut rng, 20_000);
    let mixture_entropy = mixture.entropy(&mut rng, 1_000_000);
    let mut model = NonParametricDensity::new(ChainShape::default(), 10.0, &mut rng);
    let mixture_nll = fit_density(&samples, &mut model, &config)?.final_nll;
    Ok(DensityFits {
        uniform_nll,
        mixture_nll,
        mixture_entropy,
    })
}

/// A smooth random image with noise, between 8 and 150 pixels on a side.
pub fn random_image(rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (rng.gen_range(8..150), rng.gen_range(8..150));
    let (fx, fy, phase) = (rng.gen_range(0.01..0.3), rng.gen_range(0.01..0.3), rng.gen_range(0.0..6.0));
    let noise: f64 = rng.gen_range(0.0..60.0);
    RgbImage::from_fn(w, h, |x, y| {
        let base = 128.0 + 100.0 * (fx * x as f64 + fy * y as f64 + phase).sin();
        let mut px = [0u8; 3];
        for (c, v) in px.iter_mut().enumerate() {
            let jitter = noise * (rng.gen::<f64>() - 0.5);
            *v = (base + 30.0 * c as f64 + jitter).clamp(0.0, 255.0) as u8;
        }
        image::Rgb(px)
    })
}

#[derive(Debug, Default)]
pub struct RoundTrips {
    pub cases: usize,
    pub mismatches: Vec<String>,
}

/// Compresses `count` random images with freshly initialized models of
/// random size and kind, and compares the decoder's latents and image with
/// the encoder's.
pub fn lossless_round_trips(count: usize, seed: u64) -> Result<RoundTrips> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = RoundTrips::default();
    for i in 0..count {
        let kind = if i % 2 == 0 { ModelKind::Factorized } else { ModelKind::Hyperprior };
        let distortion = if rng.gen_bool(0.5) { DistortionKind::Mse } else { DistortionKind::Msssim };
        let arch = Architecture::new(
            kind,
            distortion,
            rng.gen_range(2..12),
            rng.gen_range(2..16),
            rng.gen_range(0.001..0.1),
        );
        let codec = Codec::new(Model::new(arch, rng.gen())?);
        let img = random_image(&mut rng);
        let sent = codec.compress(&img)?;
        let got = codec.decompress(&sent.bytes)?;
        out.cases += 1;
        if got.latents.y_hat != sent.latents.y_hat {
            out.mismatches.push(format!("case {i}: ŷ differs"));
        }
        if got.latents.z_hat != sent.latents.z_hat {
            out.mismatches.push(format!("case {i}: ẑ differs"));
        }
        if got.image != sent.reconstruction {
            out.mismatches.push(format!("case {i}: reconstruction differs"));
        }
    }
    Ok(out)
}
