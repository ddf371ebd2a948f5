//! Mini-batch pinball-loss training shared by both QRNN stages.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{check_level, pinball_grad, pinball_unchecked};
use crate::nn::{AdamConfig, AdamState, Matrix, Mlp, MlpSpec, Mode};
use crate::rng;

/// Architecture of one quantile network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub skips: bool,
    pub dropout: f64,
    pub negative_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl NetConfig {
    pub fn stage1() -> Self {
        Self {
            encoder: vec![128, 64, 32, 16],
            decoder: vec![16, 32, 64, 128],
            skips: false,
            dropout: 0.1,
            negative_slope: 0.01,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }

    pub fn stage2() -> Self {
        Self {
            encoder: vec![32, 16],
            decoder: vec![16, 32],
            skips: true,
            ..Self::stage1()
        }
    }

    pub fn spec(&self, input_dim: usize) -> MlpSpec {
        let mut spec = MlpSpec::encoder_decoder(input_dim, &self.encoder, &self.decoder, self.skips, 1);
        spec.dropout = self.dropout;
        spec.negative_slope = self.negative_slope;
        spec.bn_epsilon = self.bn_epsilon;
        spec.bn_momentum = self.bn_momentum;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Upper bound on training samples per network; a seeded subset is drawn
    /// when the split holds more.
    pub max_samples: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            max_samples: Some(5_000),
        }
    }
}

impl FitConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config(
                format!("{field}.batch_size"),
                "must be at least 2 (batch normalization)",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("{field}.learning_rate"), "must be > 0"));
        }
        if self.max_samples == Some(0) {
            return Err(Error::config(format!("{field}.max_samples"), "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub level: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Draws at most `max` row indices without replacement, sorted.
pub(crate) fn subsample(n: usize, max: Option<usize>, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(max) = max {
        if n > max {
            let mut r = rng::seeded(seed);
            idx.shuffle(&mut r);
            idx.truncate(max);
            idx.sort_unstable();
        }
    }
    idx
}

/// Fits `mlp` to minimize mean pinball loss at `level`.
pub fn fit_quantile(
    mlp: &mut Mlp,
    inputs: &Matrix,
    targets: &[f64],
    level: f64,
    fit: &FitConfig,
    seed: u64,
) -> Result<TrainingHistory> {
    check_level(level)?;
    if inputs.rows() != targets.len() {
        return Err(Error::shape(format!(
            "{} input rows but {} targets",
            inputs.rows(),
            targets.len()
        )));
    }
    if inputs.rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 training samples, got {}",
            inputs.rows()
        )));
    }
    fit.validate("fit")?;
    let mut adam = AdamState::new(
        mlp.params(),
        &AdamConfig {
            learning_rate: fit.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut shuffle_rng = rng::stream(seed, &[rng::tag("shuffle")]);
    let mut dropout_rng = rng::stream(seed, &[rng::tag("dropout")]);
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    let mut history = TrainingHistory {
        level,
        epochs: Vec::with_capacity(fit.epochs),
    };
    for epoch in 0..fit.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(fit.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = inputs.select_rows(batch);
            let (y, tape) = mlp.forward(&x, Mode::Training, &mut dropout_rng)?;
            let b = batch.len() as f64;
            let mut upstream = Matrix::zeros(batch.len(), 1);
            for (r, &i) in batch.iter().enumerate() {
                let pred = y.get(r, 0);
                total += pinball_unchecked(targets[i], pred, level);
                upstream.set(r, 0, pinball_grad(targets[i], pred, level) / b);
            }
            count += batch.len();
            let grads = mlp.backward(&tape, &upstream)?;
            mlp.commit_batch_stats(&tape);
            adam.step(mlp.params_mut(), &grads, fit.learning_rate)?;
        }
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: total / count.max(1) as f64,
        });
    }
    Ok(history)
}

/// Inference over many rows, chunked to bound tape-free memory.
pub(crate) fn predict_column(mlp: &Mlp, inputs: &Matrix) -> Result<Vec<f64>> {
    const CHUNK: usize = 4096;
    let mut out = Vec::with_capacity(inputs.rows());
    let mut start = 0;
    while start < inputs.rows() {
        let end = (start + CHUNK).min(inputs.rows());
        let y = mlp.predict(&inputs.slice_rows(start, end))?;
        out.extend_from_slice(y.data());
        start = end;
    }
    Ok(out)
}
