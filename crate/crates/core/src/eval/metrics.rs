use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> Metric {
        Metric::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Metric {
        Metric::ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, evaluated from the counts as
    /// `2tp / (2tp + fp + fn)`; degenerate when either input metric is.
    pub fn f1(&self) -> Metric {
        let degenerate = self.precision().degenerate || self.recall().degenerate;
        let value = Metric::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_).value;
        Metric { value, degenerate }
    }

    pub fn accuracy(&self) -> Metric {
        Metric::ratio(self.tp + self.tn, self.total())
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

/// A ratio metric; a zero denominator yields 0 with `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

impl Metric {
    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Metric {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Metric {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Metric,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::invalid(format!("{what}[{i}] = {} is not 0 or 1", values[i]))),
        None => Ok(()),
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InsufficientData("no predictions to score".into()));
    }
    check_binary(predictions, "predictions")?;
    check_binary(labels, "labels")?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (1, _) => cm.fp += 1,
            (_, 0) => cm.tn += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

pub fn precision(cm: &ConfusionMatrix) -> Metric {
    cm.precision()
}

pub fn recall(cm: &ConfusionMatrix) -> Metric {
    cm.recall()
}

pub fn f1(cm: &ConfusionMatrix) -> Metric {
    cm.f1()
}

pub fn accuracy(cm: &ConfusionMatrix) -> Metric {
    cm.accuracy()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        let cm = confusion(&[1, 1, 0, 1, 0], &[1, 0, 0, 1, 1]).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), (2, 1, 1, 1));
    }

    #[test]
    fn metric_examples() {
        let cm = ConfusionMatrix { tp: 3, fp: 1, tn: 0, fn_: 1 };
        assert_eq!(cm.precision().value, 0.75);
        assert_eq!(cm.recall().value, 0.75);
        assert!((cm.f1().value - 0.75).abs() < 1e-15);
        let cm = ConfusionMatrix { tp: 45, fp: 5, tn: 45, fn_: 5 };
        assert!((cm.accuracy().value - 0.9).abs() < 1e-15);
        let cm = ConfusionMatrix { tp: 0, fp: 0, tn: 4, fn_: 2 };
        assert_eq!(cm.precision(), Metric { value: 0.0, degenerate: true });
    }

    #[test]
    fn bad_inputs() {
        assert!(confusion(&[], &[]).is_err());
        assert!(confusion(&[1], &[1, 0]).is_err());
        assert!(confusion(&[2], &[1]).is_err());
    }
}
