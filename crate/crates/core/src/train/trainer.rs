use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::adam::Adam;
use crate::autodiff::graph::Graph;
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, TrainingState};
use crate::model::{LossTerms, Mode, Model, NoiseSource};
use crate::tensor::Tensor;
use crate::train::corpus::sample_batch;

/// Optimization settings shared by single runs and sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub crop: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub seed: u64,
    /// Checkpoint interval in steps; 0 saves only at the end.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            crop: 64,
            batch: 8,
            learning_rate: 1e-4,
            steps: 1000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, block: usize) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("training", "batch size must be at least 1"));
        }
        if self.crop == 0 || self.crop % block != 0 {
            return Err(Error::config(
                "training",
                format!("crop size {} is not a positive multiple of {block}", self.crop),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("training", "learning rate must be positive"));
        }
        Ok(())
    }
}

pub const LOG_HEADER: &str = "step,loss,bpp_y,bpp_z,distortion";

/// Generator for the minibatch of `step`, independent of earlier steps.
pub fn batch_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Adam on the rate–distortion loss with uniform-noise latents.
pub struct Trainer {
    pub model: Model,
    adam: Adam<f32>,
    images: Vec<Tensor>,
    config: TrainConfig,
    step: u64,
}

impl Trainer {
    pub fn new(model: Model, images: Vec<Tensor>, config: TrainConfig) -> Result<Self> {
        config.validate(model.arch.block())?;
        let adam = Adam::new(&model.store, config.learning_rate);
        Ok(Self {
            model,
            adam,
            images,
            config,
            step: 0,
        })
    }

    /// Continues from saved optimizer state.
    pub fn resume(model: Model, state: TrainingState, images: Vec<Tensor>, config: TrainConfig) -> Result<Self> {
        let mut t = Self::new(model, images, config)?;
        t.step = state.step;
        t.adam = state.adam;
        t.adam.learning_rate = t.config.learning_rate;
        Ok(t)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> TrainingState {
        TrainingState {
            step: self.step,
            adam: self.adam.clone(),
        }
    }

    /// Loss terms of the batch the next step would use, without updating.
    pub fn peek(&self) -> Result<LossTerms> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, self.step + 1)?;
        Ok(out.terms(&g))
    }

    fn forward(&self, g: &mut Graph, step: u64) -> Result<crate::model::ForwardOutput> {
        let batch = sample_batch(
            &self.images,
            self.config.crop,
            self.config.batch,
            &mut batch_rng(self.config.seed, step),
        )?;
        let x = g.input(batch.images);
        let noise = NoiseSource::new(self.config.seed, step);
        self.model.forward(g, x, Mode::Noise(noise)).map_err(|e| match e {
            Error::Numerical { layer, message } => Error::Training {
                step,
                message: format!("{layer}: {message}"),
            },
            other => other,
        })
    }

    /// One optimizer update. Parameters are left untouched on failure.
    pub fn step(&mut self) -> Result<LossTerms> {
        let step = self.step + 1;
        let mut g = Graph::new();
        let out = self.forward(&mut g, step)?;
        let terms = out.terms(&g);
        let mut store = self.model.store.clone();
        store.zero_grad();
        g.backward(out.loss, &mut store)?;
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.all_finite()) {
            return Err(Error::Training {
                step,
                message: format!("non-finite gradient for {}", p.name),
            });
        }
        self.adam.step(&mut store)?;
        self.model.store = store;
        self.step = step;
        Ok(terms)
    }

    /// Trains until `config.steps`, logging every step as CSV and saving
    /// checkpoints. The last good checkpoint is kept if a step fails.
    pub fn run<W: Write>(&mut self, mut log: Option<&mut W>, checkpoint_path: Option<&Path>) -> Result<Vec<LossTerms>> {
        let mut history = Vec::new();
        if let Some(w) = log.as_mut() {
            if self.step == 0 {
                writeln!(w, "{LOG_HEADER}")?;
            }
        }
        while self.step < self.config.steps {
            let t = self.step()?;
            if let Some(w) = log.as_mut() {
                writeln!(w, "{},{},{},{},{}", self.step, t.loss, t.bpp_y, t.bpp_z, t.distortion)?;
            }
            if self.step % 100 == 0 {
                info!(
                    "step {} loss {:.4} bpp {:.4}+{:.4} distortion {:.5}",
                    self.step, t.loss, t.bpp_y, t.bpp_z, t.distortion
                );
            }
            let every = self.config.checkpoint_every;
            if let Some(path) = checkpoint_path {
                if every > 0 && self.step % every == 0 {
                    checkpoint::save(path, &self.model, Some(&self.state()))?;
                }
            }
            history.push(t);
        }
        if let Some(path) = checkpoint_path {
            checkpoint::save(path, &self.model, Some(&self.state()))?;
        }
        Ok(history)
    }
}

/// Files written by [`train_to_files`].
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub history: Vec<LossTerms>,
}

/// Trains a model and writes `out` plus a `.csv` log beside it. An existing
/// checkpoint with optimizer state at `out` is resumed.
pub fn train_to_files(model: Model, images: Vec<Tensor>, config: TrainConfig, out: &Path) -> Result<TrainOutputs> {
    let log_path = out.with_extension("csv");
    let (mut trainer, append) = match checkpoint::load(out) {
        Ok((saved, Some(state))) if saved.arch == model.arch => {
            info!("resuming {} at step {}", out.display(), state.step);
            (Trainer::resume(saved, state, images, config)?, true)
        }
        _ => (Trainer::new(model, images, config)?, false),
    };
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)?;
    let history = trainer.run(Some(&mut log), Some(out))?;
    Ok(TrainOutputs {
        checkpoint: out.to_path_buf(),
        log: log_path,
        history,
    })
}
