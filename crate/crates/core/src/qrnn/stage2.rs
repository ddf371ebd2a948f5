//! Stage-2 refiners: two skip-connected networks per sensor that map the
//! stage-1 quantile vector to refined lower and upper quartiles.

use serde::{Deserialize, Serialize};

use super::levels::{QuantileVector, RefinedQuantilePair};
use super::stage1::{windowed_samples, Normalizer, Stage1Ensemble};
use super::train::{fit_quantile, predict_column, subsample, FitConfig, NetConfig, TrainingHistory};
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Matrix, Mlp};
use crate::rng;

pub const LOWER_LEVEL: f64 = 0.25;
pub const UPPER_LEVEL: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub net: NetConfig,
    pub fit: FitConfig,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            net: NetConfig::stage2(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Refiner {
    pub sensor_id: usize,
    /// Shared with the sensor's stage-1 ensemble.
    pub normalizer: Normalizer,
    pub lower: Mlp,
    pub upper: Mlp,
}

/// Stage-1 outputs on the training windows of `segments`, paired with the
/// normalized next-step targets.
pub fn stage2_training_data(
    ensemble: &Stage1Ensemble,
    segments: &[&[f64]],
) -> Result<(Matrix, Vec<f64>)> {
    let (windows, targets) = windowed_samples(segments, ensemble.window, &ensemble.normalizer)?;
    Ok((ensemble.predict_normalized(&windows)?, targets))
}

pub fn stage2_seed(seed: u64, sensor_id: usize, which: usize) -> u64 {
    rng::derive_seed(seed, &[rng::tag("stage2"), sensor_id as u64, which as u64])
}

impl Stage2Refiner {
    /// Trains the lower (0.25) and upper (0.75) networks on normalized
    /// stage-1 vectors and normalized targets.
    pub fn train(
        sensor_id: usize,
        inputs: &Matrix,
        targets: &[f64],
        normalizer: Normalizer,
        config: &Stage2Config,
        seed: u64,
    ) -> Result<(Self, [TrainingHistory; 2])> {
        ensure_finite(inputs.data())?;
        let keep = subsample(
            inputs.rows(),
            config.fit.max_samples,
            rng::derive_seed(seed, &[rng::tag("stage2-subsample"), sensor_id as u64]),
        );
        let (inputs, targets) = if keep.len() < inputs.rows() {
            (
                inputs.select_rows(&keep),
                keep.iter().map(|&i| targets[i]).collect::<Vec<_>>(),
            )
        } else {
            (inputs.clone(), targets.to_vec())
        };
        let spec = config.net.spec(inputs.cols());
        let lo_seed = stage2_seed(seed, sensor_id, 0);
        let hi_seed = stage2_seed(seed, sensor_id, 1);
        let mut lower = Mlp::new(spec.clone(), lo_seed)?;
        let mut upper = Mlp::new(spec, hi_seed)?;
        let h_lo = fit_quantile(&mut lower, &inputs, &targets, LOWER_LEVEL, &config.fit, lo_seed)?;
        let h_hi = fit_quantile(&mut upper, &inputs, &targets, UPPER_LEVEL, &config.fit, hi_seed)?;
        Ok((
            Self {
                sensor_id,
                normalizer,
                lower,
                upper,
            },
            [h_lo, h_hi],
        ))
    }

    pub fn input_dim(&self) -> usize {
        self.lower.spec().input_dim
    }

    /// Refined quartiles, in raw units, from a raw-unit stage-1 vector.
    pub fn refine(&self, qv: &QuantileVector, time_index: usize) -> Result<RefinedQuantilePair> {
        if qv.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "quantile vector has {} entries, refiner expects {}",
                qv.len(),
                self.input_dim()
            )));
        }
        qv.check_finite()?;
        let z: Vec<f64> = qv.values.iter().map(|&v| self.normalizer.normalize(v)).collect();
        let x = Matrix::row_vector(&z);
        let lo = self.lower.predict(&x)?.get(0, 0);
        let hi = self.upper.predict(&x)?.get(0, 0);
        Ok(RefinedQuantilePair {
            q25: self.normalizer.denormalize(lo),
            q75: self.normalizer.denormalize(hi),
            sensor_id: self.sensor_id,
            time_index,
        })
    }

    /// Normalized `(q25, q75)` columns for normalized stage-1 rows.
    pub fn refine_normalized(&self, inputs: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_finite(inputs.data())?;
        Ok((predict_column(&self.lower, inputs)?, predict_column(&self.upper, inputs)?))
    }
}
