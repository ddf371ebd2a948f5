use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, StageTimes};

pub const MIN_CYCLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl StageStats {
    /// Median (mean of the middle pair for even counts) and nearest-rank p95.
    pub fn of(samples_ms: &[f64]) -> Self {
        let mut v = samples_ms.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return Self { median_ms: 0.0, p95_ms: 0.0 };
        }
        let median_ms = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            median_ms,
            p95_ms: v[rank - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub stage1_ms: StageStats,
    pub stage2_ms: StageStats,
    pub transformer_ms: StageStats,
    pub total_ms: StageStats,
    pub samples: usize,
    pub sensors: usize,
}

impl LatencyReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12} {:>12} {:>12}\n", "stage", "median_ms", "p95_ms");
        for (name, s) in [
            ("stage1", &self.stage1_ms),
            ("stage2", &self.stage2_ms),
            ("transformer", &self.transformer_ms),
            ("total", &self.total_ms),
        ] {
            out.push_str(&format!("{:<12} {:>12.3} {:>12.3}\n", name, s.median_ms, s.p95_ms));
        }
        out.push_str(&format!("cycles {} sensors {}\n", self.samples, self.sensors));
        out
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Streams `samples` (one per-sensor vector per step) through the pipeline.
/// Steps before the feature buffer is full, and then `warmup` further
/// cycles, are excluded; the next `cycles` full cycles are timed.
pub fn bench_latency(
    pipeline: &Pipeline,
    samples: &[Vec<f64>],
    warmup: usize,
    cycles: usize,
) -> Result<LatencyReport> {
    if cycles < MIN_CYCLES {
        return Err(Error::invalid(format!(
            "{cycles} timed cycles requested, at least {MIN_CYCLES} required"
        )));
    }
    let fill = pipeline.qrnn.window() + pipeline.transformer.config().sequence_length;
    let needed = fill + warmup + cycles;
    if samples.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{} samples streamed, {needed} needed for {cycles} timed cycles",
            samples.len()
        )));
    }
    let mut state = pipeline.stream();
    let mut times: Vec<StageTimes> = Vec::with_capacity(cycles);
    let mut skipped = 0;
    for sample in samples {
        let out = pipeline.step(&mut state, sample)?;
        if out.probability.is_none() {
            continue;
        }
        if skipped < warmup {
            skipped += 1;
            continue;
        }
        times.push(out.times);
        if times.len() == cycles {
            break;
        }
    }
    if times.len() < cycles {
        return Err(Error::InsufficientData(format!(
            "only {} full cycles completed",
            times.len()
        )));
    }
    let col = |f: fn(&StageTimes) -> Duration| StageStats::of(&times.iter().map(|t| ms(f(t))).collect::<Vec<_>>());
    Ok(LatencyReport {
        stage1_ms: col(|t| t.stage1),
        stage2_ms: col(|t| t.stage2),
        transformer_ms: col(|t| t.transformer),
        total_ms: col(|t| t.total()),
        samples: times.len(),
        sensors: pipeline.qrnn.num_sensors(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        let s = StageStats::of(&v);
        assert_eq!(s.median_ms, 10.5);
        assert_eq!(s.p95_ms, 19.0);
        assert_eq!(StageStats::of(&[3.0, 1.0, 2.0]).median_ms, 2.0);
    }
}
