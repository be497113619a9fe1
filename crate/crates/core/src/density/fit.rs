//! Maximum-likelihood fitting of a standalone density to scalar samples.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::adam::Adam;
use crate::autodiff::graph::Graph;
use crate::density::gaussian::normal_pdf;
use crate::density::{ChainParams, IntervalMass, NonParametricDensity, LIKELIHOOD_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer settings for [`fit_density`].
#[derive(Clone, Debug)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Samples per step; the full set is used when it is smaller.
    pub batch_size: usize,
    /// Fraction of the steps after which the learning rate is divided by 10.
    pub decay_at: f64,
    /// Steps at which the density parameters are recorded.
    pub snapshot_steps: Vec<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 1e-2,
            batch_size: 2048,
            decay_at: 0.75,
            snapshot_steps: Vec::new(),
            seed: 0,
        }
    }
}

/// Outcome of a fit: the NLL trace and intermediate parameter snapshots.
#[derive(Clone, Debug)]
pub struct FitReport {
    /// `(step, minibatch NLL in nats)` for every step.
    pub trace: Vec<(usize, f64)>,
    pub snapshots: Vec<(usize, ChainParams)>,
    /// Average NLL over all samples after the last step, in nats.
    pub final_nll: f64,
}

/// Average negative log of the noisy density over `samples`, in nats.
pub fn average_nll(model: &NonParametricDensity, samples: &[f64]) -> f64 {
    let d = model.noisy();
    let total: f64 = samples
        .iter()
        .map(|&x| -d.mass(x - 0.5, x + 0.5).max(LIKELIHOOD_FLOOR).ln())
        .sum();
    total / samples.len() as f64
}

/// Maximizes the average log noisy density of `samples` with Adam.
pub fn fit_density(
    samples: &[f64],
    model: &mut NonParametricDensity,
    config: &FitConfig,
) -> Result<FitReport> {
    if samples.len() < 1000 {
        return Err(Error::Usage(format!(
            "density fitting needs at least 1000 samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::Usage(format!("non-finite sample {bad}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.store(), config.learning_rate);
    let batch = config.batch_size.clamp(1, samples.len());
    let decay_step = (config.steps as f64 * config.decay_at) as usize;
    let mut report = FitReport {
        trace: Vec::with_capacity(config.steps),
        snapshots: Vec::new(),
        final_nll: f64::NAN,
    };
    if config.snapshot_steps.contains(&0) {
        report.snapshots.push((0, model.params().clone()));
    }
    let bank = model.bank().clone();
    for step in 1..=config.steps {
        if step == decay_step + 1 {
            adam.learning_rate = config.learning_rate / 10.0;
        }
        let values: Vec<f64> = if batch == samples.len() {
            samples.to_vec()
        } else {
            index::sample(&mut rng, samples.len(), batch)
                .into_iter()
                .map(|i| samples[i])
                .collect()
        };
        let store = model.store_mut();
        store.zero_grad();
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[1, 1, batch], values)?);
        let params: Vec<_> = bank.ids.iter().map(|&id| g.param(store, id)).collect();
        let lik = g.chain_likelihood(x, &bank.shape, &params)?;
        let lik = g.lower_bound(lik, LIKELIHOOD_FLOOR);
        let log = g.log(lik);
        let mean = g.mean(log);
        let loss = g.scale(mean, -1.0);
        let nll = g.value(loss).item();
        if !nll.is_finite() {
            return Err(Error::Training {
                step: step as u64,
                message: format!("density fit diverged (NLL {nll})"),
            });
        }
        g.backward(loss, store)?;
        adam.step(store)?;
        model.refresh();
        report.trace.push((step, nll));
        if config.snapshot_steps.contains(&step) {
            report.snapshots.push((step, model.params().clone()));
        }
    }
    report.final_nll = average_nll(model, samples);
    if !report.final_nll.is_finite() {
        return Err(Error::Training {
            step: config.steps as u64,
            message: "density fit produced a non-finite NLL".into(),
        });
    }
    Ok(report)
}

/// Writes `x, reference, fit@step…` rows on a uniform grid. The reference
/// column is left empty when no ground truth is given.
pub fn write_fit_csv<W: Write>(
    out: &mut W,
    grid: &[f64],
    reference: Option<&dyn Fn(f64) -> f64>,
    snapshots: &[(usize, ChainParams)],
) -> std::io::Result<()> {
    write!(out, "x,reference")?;
    for (step, _) in snapshots {
        write!(out, ",step_{step}")?;
    }
    writeln!(out)?;
    for &x in grid {
        write!(out, "{x}")?;
        match reference {
            Some(f) => write!(out, ",{}", f(x))?,
            None => write!(out, ",")?,
        }
        for (_, p) in snapshots {
            let d = p.channel(0);
            write!(out, ",{}", d.mass(x - 0.5, x + 0.5))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// A Gaussian mixture with `(weight, mean, standard deviation)` components.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub components: Vec<(f64, f64, f64)>,
}

impl Mixture {
    /// Three well-separated modes of different widths.
    pub fn three_modes() -> Self {
        Self {
            components: vec![(0.3, -4.0, 1.2), (0.5, 0.0, 1.0), (0.2, 5.0, 1.5)],
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, mu, sd)| w * normal_pdf((x - mu) / sd) / sd)
            .sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let pick = WeightedIndex::new(self.components.iter().map(|c| c.0)).expect("positive weights");
        (0..n)
            .map(|_| {
                let (_, mu, sd) = self.components[pick.sample(rng)];
                mu + sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }

    /// Monte-Carlo estimate of the differential entropy in nats.
    pub fn entropy<R: Rng>(&self, rng: &mut R, n: usize) -> f64 {
        let s = self.sample(rng, n);
        -s.iter().map(|&x| self.pdf(x).ln()).sum::<f64>() / n as f64
    }
}
