//! Quantile regression networks: stage-1 ensembles over sliding windows of
//! each sensor and stage-2 refiners producing the lower/upper quartiles.

mod levels;
mod stage1;
mod stage2;
mod train;

pub use levels::{QuantileLevelSet, QuantileVector, RefinedQuantilePair, DEFAULT_LEVELS};
pub use stage1::{
    stage1_seed, train_stage1, windowed_samples, Normalizer, Stage1Config, Stage1Ensemble,
};
pub use stage2::{
    stage2_seed, stage2_training_data, Stage2Config, Stage2Refiner, LOWER_LEVEL, UPPER_LEVEL,
};
pub use train::{fit_quantile, EpochRecord, FitConfig, NetConfig, TrainingHistory};

use crate::nn::Matrix;

/// Fraction of targets at or below the matching prediction.
pub fn coverage(predictions: &[f64], targets: &[f64]) -> f64 {
    let n = predictions.len().min(targets.len());
    if n == 0 {
        return 0.0;
    }
    let below = predictions
        .iter()
        .zip(targets)
        .filter(|(p, t)| t <= p)
        .count();
    below as f64 / n as f64
}

/// Fraction of rows whose entries decrease somewhere along the level axis.
pub fn non_monotone_rate(quantiles: &Matrix) -> f64 {
    if quantiles.rows() == 0 {
        return 0.0;
    }
    let bad = (0..quantiles.rows())
        .filter(|&r| quantiles.row(r).windows(2).any(|w| w[0] > w[1]))
        .count();
    bad as f64 / quantiles.rows() as f64
}

/// Fraction of time steps where the refined lower quartile exceeds the upper.
pub fn crossing_rate(lower: &[f64], upper: &[f64]) -> f64 {
    let n = lower.len().min(upper.len());
    if n == 0 {
        return 0.0;
    }
    lower.iter().zip(upper).filter(|(l, u)| l > u).count() as f64 / n as f64
}
