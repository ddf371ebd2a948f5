//! Quantile-ratio feature, fixed-length feature sequences and
//! breakdown-within-horizon labels.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::nn::Matrix;
use crate::qrnn::RefinedQuantilePair;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_P_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioConfig {
    pub epsilon: f64,
    pub p_max: f64,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            p_max: DEFAULT_P_MAX,
        }
    }
}

impl RatioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("ratio epsilon must be > 0"));
        }
        if !(self.p_max > 0.0) || !self.p_max.is_finite() {
            return Err(Error::invalid("ratio cap must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioFeature {
    pub value: f64,
    pub sensor_id: usize,
    pub time_index: usize,
}

/// `|q25| / max(|q75|, epsilon)`, capped at `p_max`.
#[inline]
pub fn ratio(q25: f64, q75: f64, config: &RatioConfig) -> f64 {
    (q25.abs() / q75.abs().max(config.epsilon)).min(config.p_max)
}

pub fn compute_ratio(pair: &RefinedQuantilePair, config: &RatioConfig) -> Result<RatioFeature> {
    config.validate()?;
    ensure_finite(&[pair.q25, pair.q75])?;
    Ok(RatioFeature {
        value: ratio(pair.q25, pair.q75, config),
        sensor_id: pair.sensor_id,
        time_index: pair.time_index,
    })
}

/// `T × S` block of per-timestep feature vectors ending at `end_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub values: Matrix,
    pub start_time: usize,
    pub end_time: usize,
    pub label: Option<u8>,
    pub horizon: Option<usize>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn sensors(&self) -> usize {
        self.values.cols()
    }

    /// Attaches the label for `horizon` against the given onsets.
    pub fn labeled(mut self, event_starts: &[usize], horizon: usize) -> Result<Self> {
        self.label = Some(label_sequence(&self, event_starts, horizon)?);
        self.horizon = Some(horizon);
        Ok(self)
    }
}

/// Overlapping windows of `length` rows every `stride` rows over
/// time-aligned per-sensor streams. Stream element 0 sits at time `offset`.
/// Fewer than `length` samples yield no sequences.
pub fn assemble_sequences<S: AsRef<[f64]>>(
    streams: &[S],
    length: usize,
    stride: usize,
    offset: usize,
) -> Result<Vec<FeatureSequence>> {
    if length == 0 || stride == 0 {
        return Err(Error::invalid("sequence length and stride must be > 0"));
    }
    let Some(first) = streams.first() else {
        return Err(Error::invalid("no sensor streams"));
    };
    let n = first.as_ref().len();
    if let Some(i) = streams.iter().position(|s| s.as_ref().len() != n) {
        return Err(Error::shape(format!(
            "stream {i} has {} samples, stream 0 has {n}",
            streams[i].as_ref().len()
        )));
    }
    if n < length {
        return Ok(Vec::new());
    }
    let count = (n - length) / stride + 1;
    let s = streams.len();
    Ok((0..count)
        .map(|k| {
            let start = k * stride;
            let mut values = Matrix::zeros(length, s);
            for (c, stream) in streams.iter().enumerate() {
                for (r, &v) in stream.as_ref()[start..start + length].iter().enumerate() {
                    values.set(r, c, v);
                }
            }
            FeatureSequence {
                values,
                start_time: offset + start,
                end_time: offset + start + length - 1,
                label: None,
                horizon: None,
            }
        })
        .collect())
}

/// 1 iff some onset falls in `(end_time, end_time + horizon]`.
pub fn label_sequence(seq: &FeatureSequence, event_starts: &[usize], horizon: usize) -> Result<u8> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be > 0"));
    }
    let end = seq.end_time;
    Ok(event_starts.iter().any(|&s| s > end && s <= end + horizon) as u8)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceRecord {
    start_time: usize,
    end_time: usize,
    label: Option<u8>,
    horizon: Option<usize>,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// One JSON object per line: times, label, horizon and the row-major matrix.
pub fn write_sequences<W: Write>(seqs: &[FeatureSequence], mut w: W) -> Result<()> {
    for s in seqs {
        let rec = SequenceRecord {
            start_time: s.start_time,
            end_time: s.end_time,
            label: s.label,
            horizon: s.horizon,
            rows: s.values.rows(),
            cols: s.values.cols(),
            values: s.values.data().to_vec(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequences<R: BufRead>(r: R) -> Result<Vec<FeatureSequence>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let rec: SequenceRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let values = Matrix::from_vec(rec.rows, rec.cols, rec.values)
            .map_err(|e| parse_err(e.to_string()))?;
        out.push(FeatureSequence {
            values,
            start_time: rec.start_time,
            end_time: rec.end_time,
            label: rec.label,
            horizon: rec.horizon,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(q25: f64, q75: f64) -> RefinedQuantilePair {
        RefinedQuantilePair {
            q25,
            q75,
            sensor_id: 0,
            time_index: 0,
        }
    }

    #[test]
    fn ratio_examples() {
        let cfg = RatioConfig::default();
        assert_eq!(compute_ratio(&pair(0.5, 1.0), &cfg).unwrap().value, 0.5);
        assert_eq!(compute_ratio(&pair(-0.5, 1.0), &cfg).unwrap().value, 0.5);
        assert_eq!(compute_ratio(&pair(0.3, 0.0), &cfg).unwrap().value, 0.3 / 1e-6);
        assert_eq!(compute_ratio(&pair(3.0, 0.0), &cfg).unwrap().value, 1e6);
        assert!(compute_ratio(&pair(f64::NAN, 1.0), &cfg).is_err());
    }

    #[test]
    fn sequence_counts() {
        let s = vec![vec![0.0; 10]];
        assert_eq!(assemble_sequences(&s, 5, 5, 0).unwrap().len(), 2);
        assert_eq!(assemble_sequences(&s, 5, 1, 0).unwrap().len(), 6);
        assert!(assemble_sequences(&[vec![0.0; 4]], 5, 1, 0).unwrap().is_empty());
        assert!(assemble_sequences(&[vec![0.0; 4], vec![0.0; 5]], 2, 1, 0).is_err());
    }

    #[test]
    fn layout_is_time_by_sensor() {
        let s = vec![vec![0.0, 1.0, 2.0, 3.0], vec![10.0, 11.0, 12.0, 13.0]];
        let seqs = assemble_sequences(&s, 3, 1, 100).unwrap();
        assert_eq!(seqs[1].values.row(0), &[1.0, 11.0]);
        assert_eq!((seqs[1].start_time, seqs[1].end_time), (101, 103));
    }

    #[test]
    fn label_examples() {
        let mut seq = assemble_sequences(&[vec![0.0; 51]], 51, 1, 0).unwrap().remove(0);
        assert_eq!(seq.end_time, 50);
        assert_eq!(label_sequence(&seq, &[100], 60).unwrap(), 1);
        assert_eq!(label_sequence(&seq, &[200], 60).unwrap(), 0);
        assert_eq!(label_sequence(&seq, &[], 60).unwrap(), 0);
        assert_eq!(label_sequence(&seq, &[50], 60).unwrap(), 0);
        assert_eq!(label_sequence(&seq, &[110], 60).unwrap(), 1);
        assert!(label_sequence(&seq, &[100], 0).is_err());
        seq = seq.labeled(&[100], 60).unwrap();
        assert_eq!((seq.label, seq.horizon), (Some(1), Some(60)));
    }

    #[test]
    fn json_lines_round_trip() {
        let s = vec![vec![0.1, 0.2, 1.0 / 3.0], vec![1e-300, -0.0, 7.5]];
        let seqs: Vec<_> = assemble_sequences(&s, 2, 1, 4)
            .unwrap()
            .into_iter()
            .map(|q| q.labeled(&[7], 2).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_sequences(&seqs, &mut buf).unwrap();
        let back = read_sequences(buf.as_slice()).unwrap();
        assert_eq!(back, seqs);
        assert!(read_sequences("{\"start_time\":1}\n".as_bytes()).is_err());
    }
}
