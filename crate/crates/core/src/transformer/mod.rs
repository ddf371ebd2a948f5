//! Pre-norm self-attention encoder with a binary classification head.

mod attention;
mod layernorm;
mod model;
mod train;

pub use attention::{attention, AttentionWeights};
pub use layernorm::LAYER_NORM_EPSILON;
pub use model::{positional_encoding, TransformerModel, TransformerTape};
pub use train::{
    accuracy, train_transformer, EpochRecord, LabeledBatch, TrainConfig, TrainingHistory,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub sequence_length: usize,
    pub input_dim: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            num_heads: 2,
            model_dim: 64,
            ffn_dim: 128,
            dropout: 0.1,
            sequence_length: 60,
            input_dim: 43,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("model_dim", self.model_dim),
            ("ffn_dim", self.ffn_dim),
            ("sequence_length", self.sequence_length),
            ("input_dim", self.input_dim),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("transformer.{field}"), "must be > 0"));
            }
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::config(
                "transformer.model_dim",
                format!("{} is not divisible by {} heads", self.model_dim, self.num_heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("transformer.dropout", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// 1 iff `probability > threshold`.
pub fn decide(probability: f64, threshold: f64) -> u8 {
    (probability > threshold) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_is_strict() {
        assert_eq!(decide(0.7, 0.5), 1);
        assert_eq!(decide(0.5, 0.5), 0);
        assert_eq!(decide(0.7, 0.99), 0);
    }

    #[test]
    fn config_checks() {
        assert!(TransformerConfig::default().validate().is_ok());
        let bad = TransformerConfig {
            model_dim: 63,
            ..TransformerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
