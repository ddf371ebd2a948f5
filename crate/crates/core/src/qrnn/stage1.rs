//! Per-sensor stage-1 ensembles: one network per quantile level, each
//! mapping a window of recent normalized samples to the next-step quantile.

use serde::{Deserialize, Serialize};

use super::levels::{QuantileLevelSet, QuantileVector};
use super::train::{fit_quantile, predict_column, subsample, FitConfig, NetConfig, TrainingHistory};
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Matrix, Mlp};
use crate::rng;

/// z-score statistics of one sensor's training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    /// Constant channels get unit scale so that they normalize to zero.
    pub fn fit<'a>(segments: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sq = 0.0;
        let segments: Vec<&[f64]> = segments.into_iter().collect();
        for s in &segments {
            for &v in *s {
                n += 1;
                sum += v;
            }
        }
        if n == 0 {
            return Err(Error::InsufficientData("cannot normalize an empty series".into()));
        }
        let mean = sum / n as f64;
        for s in &segments {
            for &v in *s {
                sq += (v - mean) * (v - mean);
            }
        }
        let std = (sq / n as f64).sqrt();
        Ok(Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        })
    }

    #[inline]
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub window: usize,
    pub net: NetConfig,
    pub fit: FitConfig,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            window: 32,
            net: NetConfig::stage1(),
            fit: FitConfig::default(),
        }
    }
}

/// Sliding windows of `window` normalized samples and the normalized value
/// one step after each window. Windows never cross segment boundaries.
pub fn windowed_samples(
    segments: &[&[f64]],
    window: usize,
    normalizer: &Normalizer,
) -> Result<(Matrix, Vec<f64>)> {
    if window == 0 {
        return Err(Error::invalid("window length must be > 0"));
    }
    let count: usize = segments.iter().map(|s| s.len().saturating_sub(window)).sum();
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "need at least {} consecutive samples for window length {window}",
            window + 1
        )));
    }
    let mut data = Vec::with_capacity(count * window);
    let mut targets = Vec::with_capacity(count);
    for seg in segments {
        ensure_finite(seg)?;
        let z: Vec<f64> = seg.iter().map(|&v| normalizer.normalize(v)).collect();
        for end in window..z.len() {
            data.extend_from_slice(&z[end - window..end]);
            targets.push(z[end]);
        }
    }
    Ok((Matrix::from_vec(count, window, data)?, targets))
}

/// Every full window of a series (no targets), normalized.
pub(crate) fn inference_windows(series: &[f64], window: usize, normalizer: &Normalizer) -> Matrix {
    let count = series.len().saturating_sub(window - 1);
    let z: Vec<f64> = series.iter().map(|&v| normalizer.normalize(v)).collect();
    let mut data = Vec::with_capacity(count * window);
    for end in window..=z.len() {
        data.extend_from_slice(&z[end - window..end]);
    }
    Matrix::from_vec(count, window, data).expect("window count")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Ensemble {
    pub sensor_id: usize,
    pub levels: QuantileLevelSet,
    pub window: usize,
    pub normalizer: Normalizer,
    pub models: Vec<Mlp>,
}

/// Seed for one (sensor, level) network; independent of every other pair.
pub fn stage1_seed(seed: u64, sensor_id: usize, level_index: usize) -> u64 {
    rng::derive_seed(seed, &[rng::tag("stage1"), sensor_id as u64, level_index as u64])
}

/// Trains one stage-1 network for a single quantile level.
pub fn train_stage1(
    segments: &[&[f64]],
    normalizer: &Normalizer,
    level: f64,
    config: &Stage1Config,
    seed: u64,
) -> Result<(Mlp, TrainingHistory)> {
    let (inputs, targets) = windowed_samples(segments, config.window, normalizer)?;
    let keep = subsample(inputs.rows(), config.fit.max_samples, rng::derive_seed(seed, &[1]));
    let (inputs, targets) = if keep.len() < inputs.rows() {
        (
            inputs.select_rows(&keep),
            keep.iter().map(|&i| targets[i]).collect(),
        )
    } else {
        (inputs, targets)
    };
    let mut mlp = Mlp::new(config.net.spec(config.window), seed)?;
    let history = fit_quantile(&mut mlp, &inputs, &targets, level, &config.fit, seed)?;
    Ok((mlp, history))
}

impl Stage1Ensemble {
    /// Trains one network per level on the sensor's training segments.
    pub fn train(
        sensor_id: usize,
        segments: &[&[f64]],
        levels: &QuantileLevelSet,
        config: &Stage1Config,
        seed: u64,
    ) -> Result<(Self, Vec<TrainingHistory>)> {
        let normalizer = Normalizer::fit(segments.iter().copied())?;
        let mut models = Vec::with_capacity(levels.len());
        let mut histories = Vec::with_capacity(levels.len());
        for (k, &level) in levels.levels().iter().enumerate() {
            let (mlp, h) = train_stage1(
                segments,
                &normalizer,
                level,
                config,
                stage1_seed(seed, sensor_id, k),
            )?;
            models.push(mlp);
            histories.push(h);
        }
        Ok((
            Self {
                sensor_id,
                levels: levels.clone(),
                window: config.window,
                normalizer,
                models,
            },
            histories,
        ))
    }

    /// Quantile estimates, in raw units, for the step after `window`.
    pub fn predict_quantiles(&self, window: &[f64]) -> Result<QuantileVector> {
        if window.len() != self.window {
            return Err(Error::shape(format!(
                "window has {} samples, ensemble expects {}",
                window.len(),
                self.window
            )));
        }
        ensure_finite(window)?;
        let z: Vec<f64> = window.iter().map(|&v| self.normalizer.normalize(v)).collect();
        let x = Matrix::row_vector(&z);
        let values = self
            .models
            .iter()
            .map(|m| Ok(self.normalizer.denormalize(m.predict(&x)?.get(0, 0))))
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantileVector { values })
    }

    /// Normalized estimates for pre-normalized windows, one column per level.
    pub fn predict_normalized(&self, windows: &Matrix) -> Result<Matrix> {
        let n = windows.rows();
        let mut out = Matrix::zeros(n, self.models.len());
        for (k, m) in self.models.iter().enumerate() {
            let col = predict_column(m, windows)?;
            for (r, v) in col.into_iter().enumerate() {
                out.set(r, k, v);
            }
        }
        Ok(out)
    }

    /// Normalized estimates for every full window of a raw series. Row `i`
    /// corresponds to the window ending at sample `i + window − 1`.
    pub fn predict_series_normalized(&self, series: &[f64]) -> Result<Matrix> {
        ensure_finite(series)?;
        if series.len() < self.window {
            return Ok(Matrix::zeros(0, self.models.len()));
        }
        self.predict_normalized(&inference_windows(series, self.window, &self.normalizer))
    }
}
