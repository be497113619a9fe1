//! Trains a small factorized model on the bundled corpus for a few hundred
//! steps, printing the loss terms as it goes.
//!
//! cargo run --release --example train

use std::path::Path;

use hyperprior::model::{Architecture, DistortionKind, Model, ModelKind};
use hyperprior::train::{load_corpus, TrainConfig, Trainer};

fn main() -> hyperprior::Result<()> {
    let config = TrainConfig {
        crop: 64,
        batch: 4,
        learning_rate: 1e-3,
        steps: 300,
        seed: 0,
        checkpoint_every: 0,
    };
    let corpus = load_corpus(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus/train"),
        config.crop,
        None,
    )?;
    let arch = Architecture::new(ModelKind::Factorized, DistortionKind::Mse, 16, 24, 0.01);
    let mut trainer = Trainer::new(Model::new(arch, 0)?, corpus.images, config)?;
    while trainer.step_count() < 300 {
        let t = trainer.step()?;
        if trainer.step_count() % 50 == 0 {
            println!(
                "step {:3}: loss {:.4}, {:.4} bpp, MSE {:.5}",
                trainer.step_count(),
                t.loss,
                t.bpp_y + t.bpp_z,
                t.distortion
            );
        }
    }
    let out = std::env::temp_dir().join("example_train.bmck");
    hyperprior::model::checkpoint::save(&out, &trainer.model, None)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}
