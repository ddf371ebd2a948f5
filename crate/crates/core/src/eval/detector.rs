use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::nn::Matrix;

/// Scores a `T × S` sequence by how far each sensor's mean over the sequence
/// sits from its training mean: the average over sensors of the squared
/// z-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDetector {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub threshold: f64,
}

impl ThresholdDetector {
    /// Per-sensor statistics of the sequence means in `train`; the threshold
    /// starts at 0 and is set by `calibrate`.
    pub fn fit(train: &[&Matrix]) -> Result<Self> {
        let Some(first) = train.first() else {
            return Err(Error::InsufficientData("no training sequences".into()));
        };
        let s = first.cols();
        let mut sum = vec![0.0; s];
        let mut sq = vec![0.0; s];
        for m in train {
            if m.cols() != s {
                return Err(Error::shape(format!("sequence has {} sensors, expected {s}", m.cols())));
            }
            ensure_finite(m.data())?;
            for (k, v) in m.column_means().into_iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        let n = train.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean,
            std,
            threshold: 0.0,
        })
    }

    pub fn score(&self, seq: &Matrix) -> Result<f64> {
        if seq.cols() != self.mean.len() {
            return Err(Error::shape(format!(
                "sequence has {} sensors, detector expects {}",
                seq.cols(),
                self.mean.len()
            )));
        }
        let means = seq.column_means();
        let total: f64 = means
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| ((v - m) / s).powi(2))
            .sum();
        Ok(total / means.len() as f64)
    }

    pub fn scores(&self, seqs: &[&Matrix]) -> Result<Vec<f64>> {
        seqs.iter().map(|m| self.score(m)).collect()
    }

    pub fn calibrate(&mut self, seqs: &[&Matrix], labels: &[u8]) -> Result<()> {
        self.threshold = calibrate_threshold(&self.scores(seqs)?, labels)?;
        Ok(())
    }

    pub fn predict(&self, seqs: &[&Matrix]) -> Result<Vec<u8>> {
        Ok(self
            .scores(seqs)?
            .into_iter()
            .map(|s| (s > self.threshold) as u8)
            .collect())
    }
}

/// Threshold maximizing F1 of `score > threshold` on the given labels, with
/// accuracy as the tie-break and the smallest such threshold after that.
/// Candidates are midpoints between consecutive distinct scores plus one
/// value below and one above the observed range.
pub fn calibrate_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::InsufficientData("no calibration data".into()));
    }
    ensure_finite(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let mut candidates = vec![lo - 1.0 - lo.abs()];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(hi + 1.0 + hi.abs());

    // sweep from high to low threshold with running counts
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let n = labels.len();
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0);
    let mut idx = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    for &thr in candidates.iter().rev() {
        while idx < n && scores[order[idx]] > thr {
            if labels[order[idx]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        let fn_ = positives - tp;
        let tn = n - positives - fp;
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        let acc = (tp + tn) as f64 / n as f64;
        if (f1, acc) >= (best.0, best.1) {
            best = (f1, acc, thr);
        }
    }
    Ok(best.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_separates_clean_scores() {
        let t = calibrate_threshold(&[0.1, 0.2, 0.9, 1.1], &[0, 0, 1, 1]).unwrap();
        assert!(t > 0.2 && t < 0.9);
    }

    #[test]
    fn calibration_without_positives_predicts_all_negative() {
        let s = [0.1, 0.5, 0.3];
        let t = calibrate_threshold(&s, &[0, 0, 0]).unwrap();
        assert!(s.iter().all(|&v| v <= t));
    }

    #[test]
    fn detector_scores_shifted_means() {
        let normal: Vec<Matrix> = (0..10)
            .map(|i| Matrix::filled(4, 2, (i % 3) as f64 * 0.1))
            .collect();
        let refs: Vec<&Matrix> = normal.iter().collect();
        let d = ThresholdDetector::fit(&refs).unwrap();
        let shifted = Matrix::filled(4, 2, 5.0);
        assert!(d.score(&shifted).unwrap() > 10.0 * d.score(&normal[1]).unwrap().max(1e-3));
    }
}
