//! Univariate priors: the cumulative-composition density, the zero-mean
//! Gaussian, and their convolution with a unit-width uniform.

pub mod fit;
pub mod gaussian;
pub mod nonparametric;

pub use fit::{fit_density, FitConfig, FitReport, Mixture};
pub use gaussian::Gaussian;
pub use nonparametric::{ChainParams, ChainShape, ChannelDensity, DensityBank};

use rand::Rng;

use crate::autodiff::param::{ParamStore, Reparam};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Likelihoods are clamped here before taking logarithms.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / 4_294_967_296.0;

/// Default lower bound on predicted scales.
pub const SCALE_MIN: f64 = 1e-2;

/// Probability of an open interval under a continuous base density.
pub trait IntervalMass {
    /// `P(a < Y < b)`; either edge may be infinite.
    fn mass(&self, a: f64, b: f64) -> f64;

    /// Mass of the integers `lo ..= hi` after convolution with `U(-½, ½)`.
    fn integer_mass(&self, lo: i64, hi: i64) -> f64 {
        self.mass(lo as f64 - 0.5, hi as f64 + 0.5)
    }
}

/// A base density convolved with a unit-width uniform. Evaluated at integers
/// this is the PMF of the rounded variable.
pub enum NoisyDensity<'a> {
    NonParametric(ChannelDensity<'a>),
    Gaussian(Gaussian),
}

impl NoisyDensity<'_> {
    pub fn gaussian(scale: f64) -> Self {
        NoisyDensity::Gaussian(Gaussian { scale })
    }

    pub fn pmf(&self, n: i64) -> f64 {
        self.integer_mass(n, n)
    }

    /// Natural log of `c(v + ½) − c(v − ½)`, floored at [`LIKELIHOOD_FLOOR`].
    pub fn log_likelihood(&self, value: f64) -> f64 {
        self.mass(value - 0.5, value + 0.5).max(LIKELIHOOD_FLOOR).ln()
    }
}

impl IntervalMass for NoisyDensity<'_> {
    fn mass(&self, a: f64, b: f64) -> f64 {
        match self {
            NoisyDensity::NonParametric(d) => d.mass(a, b),
            NoisyDensity::Gaussian(g) => g.mass(a, b),
        }
    }
}

/// A single trainable cumulative-composition density.
#[derive(Clone, Debug)]
pub struct NonParametricDensity {
    store: ParamStore<f64>,
    bank: DensityBank,
    effective: ChainParams,
}

impl NonParametricDensity {
    /// Starts close to a logistic of scale `init_scale`.
    pub fn new<R: Rng>(shape: ChainShape, init_scale: f64, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let bank = DensityBank::init(&mut store, "density", shape, 1, init_scale, rng);
        let effective = bank.effective(&store);
        Self {
            store,
            bank,
            effective,
        }
    }

    /// Builds a density from effective stage values `(H_k, b_k, a_k)`, with
    /// `H_k` row-major `r_k × d_k`. The last stage's `a` must be empty.
    pub fn from_stages(shape: ChainShape, stages: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let shapes = shape.param_shapes(1);
        let reparams = shape.param_reparams();
        let flat: Vec<&Vec<f64>> = stages
            .iter()
            .enumerate()
            .flat_map(|(k, (h, b, a))| {
                let mut v = vec![h, b];
                if k + 1 < stages.len() {
                    v.push(a);
                }
                v
            })
            .collect();
        if stages.len() != shape.depth() || flat.len() != shapes.len() {
            return Err(Error::config("density", "stage count does not match the shape"));
        }
        let mut store = ParamStore::new();
        let mut ids = Vec::new();
        for (i, ((values, dims), reparam)) in flat.iter().zip(&shapes).zip(&reparams).enumerate() {
            let raw = values.iter().map(|&v| reparam.inverse(v)).collect();
            let t = Tensor::new(&dims[..], raw).map_err(|e| Error::config("density", e.to_string()))?;
            ids.push(store.add(format!("density.{i}"), t, *reparam));
        }
        if flat.iter().zip(&reparams).any(|(vals, r)| {
            vals.iter().any(|&v| match r {
                Reparam::Softplus => v <= 0.0,
                Reparam::Tanh => v <= -1.0 || v >= 1.0,
                _ => !v.is_finite(),
            })
        }) {
            return Err(Error::config(
                "density",
                "H must be positive and a inside (-1, 1)",
            ));
        }
        let bank = DensityBank {
            shape,
            channels: 1,
            ids,
        };
        let effective = bank.effective(&store);
        Ok(Self {
            store,
            bank,
            effective,
        })
    }

    pub fn shape(&self) -> &ChainShape {
        &self.bank.shape
    }

    pub fn store(&self) -> &ParamStore<f64> {
        &self.store
    }

    pub fn bank(&self) -> &DensityBank {
        &self.bank
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }

    /// Recomputes the cached effective parameters after the store changed.
    pub(crate) fn refresh(&mut self) {
        self.effective = self.bank.effective(&self.store);
    }

    pub fn params(&self) -> &ChainParams {
        &self.effective
    }

    pub fn cumulative(&self, x: f64) -> f64 {
        self.effective.channel(0).cumulative(x)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        self.effective.channel(0).log_density(x)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.effective.channel(0).density(x)
    }

    pub fn noisy(&self) -> NoisyDensity<'_> {
        NoisyDensity::NonParametric(self.effective.channel(0))
    }
}
