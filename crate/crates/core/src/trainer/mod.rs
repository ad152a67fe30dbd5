//! Configuration, SGD training, checkpoints and cross-validation.

pub mod checkpoint;
pub mod config;
mod train;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use train::{
    derive_seed, evaluate, run_cv, scores, train, train_fold, CvOutput, Dataset, FoldResult,
    TrainOutput, THRESHOLD,
};

#[cfg(test)]
mod tests;
