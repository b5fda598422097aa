//! Data generation, dataset handling, evaluation reports and latent
//! visualization used by the command-line tool.

mod commands;
mod experiment;
mod pca;
mod plot;
mod synthetic;

pub use commands::*;
pub use experiment::{load_motion_glob, resolve_spec, ExperimentConfig, MotionSource};
pub use pca::Pca;
pub use synthetic::{generate_synthetic_motions, human_quaternion_ranges, SyntheticMotionParams};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::embodiment::EmbodimentError;
use crate::latent::LatentError;
use crate::metrics::MetricsError;
use crate::policy::PolicyError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ToolkitError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, ToolkitError>;

/// Deterministic train/test partition of `0..n`. The first
/// `round(fraction * n)` indices of a seeded shuffle form the train set.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ToolkitError::InvalidParams(format!("split must lie in (0, 1), got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((fraction * n as f64).round() as usize).min(n);
    let test = idx.split_off(cut);
    Ok((idx, test))
}
