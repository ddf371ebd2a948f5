use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Quantile levels estimated by every stage-1 ensemble.
pub const DEFAULT_LEVELS: [f64; 10] = [0.01, 0.1, 0.2, 0.25, 0.5, 0.6, 0.75, 0.8, 0.9, 0.99];

/// Strictly increasing quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileLevelSet {
    levels: Vec<f64>,
}

impl Default for QuantileLevelSet {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
        }
    }
}

impl TryFrom<Vec<f64>> for QuantileLevelSet {
    type Error = Error;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<QuantileLevelSet> for Vec<f64> {
    fn from(set: QuantileLevelSet) -> Self {
        set.levels
    }
}

impl QuantileLevelSet {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("quantile level set is empty"));
        }
        if levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::invalid("quantile levels must lie in (0, 1)"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("quantile levels must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index_of(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|&a| (a - level).abs() < 1e-12)
    }
}

/// Stage-1 estimates for one sensor at one time step, ordered like the
/// level set that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileVector {
    pub values: Vec<f64>,
}

impl QuantileVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when values never decrease with level.
    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn check_finite(&self) -> Result<()> {
        ensure_finite(&self.values)
    }
}

/// Refined lower/upper quartile estimates from stage 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedQuantilePair {
    pub q25: f64,
    pub q75: f64,
    pub sensor_id: usize,
    pub time_index: usize,
}
