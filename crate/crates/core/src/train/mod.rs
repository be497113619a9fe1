//! Corpus loading, the optimization loop, and capacity/λ sweeps.

pub mod corpus;
pub mod sweep;
pub mod trainer;

pub use corpus::{load_corpus, sample_batch, Batch, Corpus};
pub use sweep::{run_sweep, SweepConfig, SweepRow};
pub use trainer::{batch_rng, train_to_files, TrainConfig, TrainOutputs, Trainer};
