use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::TransformerModel;
use super::{decide, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::feature::FeatureSequence;
use crate::nn::activation::sigmoid;
use crate::nn::loss::bce_from_logit;
use crate::nn::{AdamConfig, AdamState, Matrix, Mode};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fit the per-feature input standardization on the training set.
    pub standardize: bool,
    /// Keep the parameters of the epoch with the lowest validation loss.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            standardize: true,
            restore_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config(format!("{field}.batch_size"), "must be > 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("{field}.learning_rate"), "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, when `restore_best` is set.
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Sequences with their 0/1 targets.
pub struct LabeledBatch<'a> {
    pub inputs: Vec<&'a Matrix>,
    pub labels: Vec<f64>,
}

impl<'a> LabeledBatch<'a> {
    pub fn from_sequences(seqs: &'a [FeatureSequence]) -> Result<Self> {
        let labels = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| match s.label {
                Some(l @ (0 | 1)) => Ok(l as f64),
                Some(l) => Err(Error::invalid(format!("sequence {i} has label {l}"))),
                None => Err(Error::invalid(format!("sequence {i} is unlabeled"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inputs: seqs.iter().map(|s| &s.values).collect(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean binary cross-entropy and accuracy at the default threshold.
fn evaluate(model: &TransformerModel, data: &LabeledBatch) -> Result<(f64, f64)> {
    let logits = model.predict_logits(&data.inputs)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (&z, &y) in logits.iter().zip(&data.labels) {
        loss += bce_from_logit(z, y);
        correct += (decide(sigmoid(z), DEFAULT_THRESHOLD) as f64 == y) as usize;
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Fraction of labeled sequences classified correctly at `threshold`.
pub fn accuracy(model: &TransformerModel, seqs: &[FeatureSequence], threshold: f64) -> Result<f64> {
    let data = LabeledBatch::from_sequences(seqs)?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no sequences to score".into()));
    }
    let probs = model.predict_batch(&data.inputs)?;
    let correct = probs
        .iter()
        .zip(&data.labels)
        .filter(|(&p, &y)| decide(p, threshold) as f64 == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Mini-batch Adam on mean binary cross-entropy.
pub fn train_transformer(
    model: &mut TransformerModel,
    train: &[FeatureSequence],
    validation: &[FeatureSequence],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainingHistory> {
    config.validate("train")?;
    let data = LabeledBatch::from_sequences(train)?;
    let positives = data.labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::InsufficientData(format!(
            "training set needs both classes ({positives} positive of {})",
            data.len()
        )));
    }
    let val = LabeledBatch::from_sequences(validation)?;
    if config.standardize {
        model.fit_standardization(&data.inputs)?;
    }
    let mut adam = AdamState::new(
        model.params(),
        &AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut shuffle_rng = rng::stream(seed, &[rng::tag("shuffle")]);
    let mut dropout_rng = rng::stream(seed, &[rng::tag("dropout")]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, usize, crate::nn::ParameterSet)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<&Matrix> = chunk.iter().map(|&i| data.inputs[i]).collect();
            let (logits, tape) = model.forward(&inputs, Mode::Training, &mut dropout_rng)?;
            let n = chunk.len() as f64;
            let upstream: Vec<f64> = logits
                .iter()
                .zip(chunk)
                .map(|(&z, &i)| {
                    let y = data.labels[i];
                    total += bce_from_logit(z, y);
                    (sigmoid(z) - y) / n
                })
                .collect();
            let grads = model.backward(&tape, &upstream)?;
            adam.step(model.params_mut(), &grads, config.learning_rate)?;
        }
        let (validation_loss, validation_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(model, &val)?;
            (Some(l), Some(a))
        };
        if config.restore_best {
            if let Some(l) = validation_loss {
                if best.as_ref().map_or(true, |(b, _, _)| l < *b) {
                    best = Some((l, epoch, model.params().clone()));
                }
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / data.len() as f64,
            validation_loss,
            validation_accuracy,
        });
    }
    if let Some((_, epoch, params)) = best {
        model.params_mut().assign(&params)?;
        history.best_epoch = Some(epoch);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::TransformerConfig;

    fn tiny() -> TransformerConfig {
        TransformerConfig {
            num_layers: 1,
            model_dim: 8,
            ffn_dim: 8,
            sequence_length: 3,
            input_dim: 2,
            ..TransformerConfig::default()
        }
    }

    fn seqs(labels: &[u8]) -> Vec<FeatureSequence> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| FeatureSequence {
                values: Matrix::filled(3, 2, l as f64 + i as f64 * 0.01),
                start_time: i,
                end_time: i + 2,
                label: Some(l),
                horizon: Some(1),
            })
            .collect()
    }

    #[test]
    fn single_class_is_an_error() {
        let mut m = TransformerModel::new(tiny(), 0).unwrap();
        let r = train_transformer(&mut m, &seqs(&[1, 1, 1]), &[], &TrainConfig::default(), 0);
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let mut m = TransformerModel::new(tiny(), 0).unwrap();
        let before = m.params().clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let h = train_transformer(&mut m, &seqs(&[0, 1, 0, 1]), &[], &cfg, 0).unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(m.params(), &before);
    }

    #[test]
    fn training_is_deterministic() {
        let data = seqs(&[0, 1, 0, 1, 1, 0]);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = TransformerModel::new(tiny(), 2).unwrap();
            let h = train_transformer(&mut m, &data, &data, &cfg, 11).unwrap();
            (m, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }
}
