use super::trace::SensorTrace;
use crate::error::{Error, Result};

/// Contiguous run of samples `[start, end)` from one regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub abnormal: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitPart {
    pub segments: Vec<Segment>,
}

impl SplitPart {
    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn normal_count(&self) -> usize {
        self.segments.iter().filter(|s| !s.abnormal).map(Segment::len).sum()
    }

    pub fn abnormal_count(&self) -> usize {
        self.segments.iter().filter(|s| s.abnormal).map(Segment::len).sum()
    }

    /// Slices of `series` covered by each segment.
    pub fn slices<'a>(&self, series: &'a [f64]) -> Vec<&'a [f64]> {
        self.segments.iter().map(|s| &series[s.start..s.end]).collect()
    }
}

pub const TRAIN: usize = 0;
pub const VALIDATION: usize = 1;
pub const TEST: usize = 2;

/// Train/validation/test partition of one trace's timeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSplit {
    pub parts: [SplitPart; 3],
    assignment: Vec<u8>,
}

impl TraceSplit {
    pub fn train(&self) -> &SplitPart {
        &self.parts[TRAIN]
    }

    pub fn validation(&self) -> &SplitPart {
        &self.parts[VALIDATION]
    }

    pub fn test(&self) -> &SplitPart {
        &self.parts[TEST]
    }

    /// Index of the part holding sample `t`.
    pub fn part_of(&self, t: usize) -> usize {
        self.assignment[t] as usize
    }

    /// Whether every sample in `[start, end)` belongs to `part`.
    pub fn covers(&self, part: usize, start: usize, end: usize) -> bool {
        end <= self.assignment.len() && self.assignment[start..end].iter().all(|&p| p as usize == part)
    }
}

/// Splits each regime's samples in time order: the first `ratios.0` share of
/// normal samples goes to train, the next `ratios.1` to validation and the
/// rest to test, and likewise for abnormal samples. Part sizes per regime are
/// rounded cumulative shares, so each is within one sample of exact.
pub fn split_trace(trace: &SensorTrace, ratios: (f64, f64, f64)) -> Result<TraceSplit> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be non-negative and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let mask = trace.abnormal_mask();
    let mut assignment = vec![0u8; trace.duration];
    for regime in [false, true] {
        let idx: Vec<usize> = (0..trace.duration).filter(|&t| mask[t] == regime).collect();
        let n = idx.len() as f64;
        let first = ((a * n).round() as usize).min(idx.len());
        let second = (((a + b) * n).round() as usize).clamp(first, idx.len());
        for (k, &t) in idx.iter().enumerate() {
            assignment[t] = if k < first {
                TRAIN as u8
            } else if k < second {
                VALIDATION as u8
            } else {
                TEST as u8
            };
        }
    }
    let mut parts: [SplitPart; 3] = Default::default();
    let mut start = 0;
    for t in 1..=trace.duration {
        if t == trace.duration || assignment[t] != assignment[start] || mask[t] != mask[start] {
            parts[assignment[start] as usize].segments.push(Segment {
                start,
                end: t,
                abnormal: mask[start],
            });
            start = t;
        }
    }
    Ok(TraceSplit { parts, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::channels::scaled_channels;
    use crate::plantsim::faults::{FaultSignature, FaultSpec};
    use crate::plantsim::trace::generate_trace;

    fn trace(duration: usize, faults: &[(usize, usize)]) -> SensorTrace {
        let ch = scaled_channels(5, 1.0);
        let faults: Vec<FaultSpec> = faults
            .iter()
            .map(|&(onset, len)| FaultSpec {
                onset_time: onset,
                ramp_duration: 0,
                duration: len,
                affected_channels: vec![0],
                signature: FaultSignature::PressureDrop,
                severity: 1.0,
            })
            .collect();
        generate_trace(&ch, &faults, duration, 0).unwrap()
    }

    #[test]
    fn per_class_proportions() {
        let t = trace(200_000, &[(100_000, 100_000)]);
        let s = split_trace(&t, (0.6, 0.2, 0.2)).unwrap();
        assert_eq!(s.train().normal_count(), 60_000);
        assert_eq!(s.validation().normal_count(), 20_000);
        assert_eq!(s.test().normal_count(), 20_000);
        assert_eq!(s.train().abnormal_count(), 60_000);
        assert_eq!(s.validation().abnormal_count(), 20_000);
        assert_eq!(s.test().abnormal_count(), 20_000);
    }

    #[test]
    fn all_train() {
        let t = trace(1000, &[(200, 100)]);
        let s = split_trace(&t, (1.0, 0.0, 0.0)).unwrap();
        assert_eq!(s.train().len(), 1000);
        assert!(s.validation().is_empty() && s.test().is_empty());
    }

    #[test]
    fn bad_ratios() {
        let t = trace(100, &[]);
        assert!(split_trace(&t, (0.5, 0.2, 0.2)).is_err());
        assert!(split_trace(&t, (1.2, -0.2, 0.0)).is_err());
    }

    #[test]
    fn segments_partition_the_timeline() {
        let t = trace(5000, &[(700, 300), (1800, 500), (3100, 400), (4200, 300)]);
        let s = split_trace(&t, (0.6, 0.2, 0.2)).unwrap();
        let mut seen = vec![0u8; 5000];
        for (p, part) in s.parts.iter().enumerate() {
            for seg in &part.segments {
                assert!(!seg.is_empty());
                for i in seg.start..seg.end {
                    seen[i] += 1;
                    assert_eq!(s.part_of(i), p);
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }
}
