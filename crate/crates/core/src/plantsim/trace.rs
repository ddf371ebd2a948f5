use rand_distr::{Distribution, Normal};

use super::channels::ChannelSpec;
use super::faults::{inject, FaultSpec, ScheduledFault};
use crate::error::{Error, Result};
use crate::rng;

/// Generated multichannel recording with its ground-truth fault schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    pub specs: Vec<ChannelSpec>,
    pub channels: Vec<Vec<f64>>,
    pub schedule: Vec<ScheduledFault>,
    pub seed: u64,
    pub duration: usize,
}

/// Builds every channel as base level + periodic components + seeded
/// Gaussian noise + injected fault signatures. Each channel draws noise from
/// its own stream, so adding or removing a channel leaves the others intact.
pub fn generate_trace(
    specs: &[ChannelSpec],
    faults: &[FaultSpec],
    duration: usize,
    seed: u64,
) -> Result<SensorTrace> {
    if duration == 0 {
        return Err(Error::invalid("trace duration must be > 0"));
    }
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        if spec.id != i {
            return Err(Error::invalid(format!("channel at position {i} has id {}", spec.id)));
        }
    }
    for f in faults {
        f.validate(specs.len())?;
        if f.end_time() > duration {
            return Err(Error::invalid(format!(
                "fault at {} ends after the trace ({duration} samples)",
                f.onset_time
            )));
        }
    }
    let mut channels = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut r = rng::stream(seed, &[rng::tag("noise"), spec.id as u64]);
        let noise = Normal::new(0.0, spec.base.noise_std)
            .map_err(|e| Error::invalid(format!("channel {}: {e}", spec.id)))?;
        let mut values: Vec<f64> = (0..duration)
            .map(|t| spec.base.deterministic(t) + noise.sample(&mut r))
            .collect();
        for f in faults.iter().filter(|f| f.affected_channels.contains(&spec.id)) {
            inject(f, spec, &mut values);
        }
        channels.push(values);
    }
    let mut schedule: Vec<ScheduledFault> = faults
        .iter()
        .map(|f| ScheduledFault {
            start: f.onset_time,
            end: f.end_time(),
            fault: f.clone(),
        })
        .collect();
    schedule.sort_by_key(|s| (s.start, s.end));
    Ok(SensorTrace {
        specs: specs.to_vec(),
        channels,
        schedule,
        seed,
        duration,
    })
}

impl SensorTrace {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Distinct fault onsets in increasing order.
    pub fn event_starts(&self) -> Vec<usize> {
        let mut starts: Vec<usize> = self.schedule.iter().map(|s| s.start).collect();
        starts.dedup();
        starts
    }

    /// Merged `[start, end)` intervals during which any fault is active.
    pub fn active_intervals(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for s in &self.schedule {
            match out.last_mut() {
                Some(last) if s.start <= last.1 => last.1 = last.1.max(s.end),
                _ => out.push((s.start, s.end)),
            }
        }
        out
    }

    /// Per-sample regime flags: `true` inside an active fault interval.
    pub fn abnormal_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.duration];
        for (a, b) in self.active_intervals() {
            mask[a..b.min(self.duration)].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// Per-timestep vector across channels.
    pub fn sample(&self, t: usize) -> Vec<f64> {
        self.channels.iter().map(|c| c[t]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::channels::{plant_channels, scaled_channels};
    use crate::plantsim::faults::FaultSignature;

    #[test]
    fn unknown_channel_is_rejected() {
        let ch = scaled_channels(5, 1.0);
        let f = FaultSpec {
            onset_time: 50,
            ramp_duration: 10,
            duration: 20,
            affected_channels: vec![9],
            signature: FaultSignature::SpikeTrain,
            severity: 1.0,
        };
        assert!(matches!(generate_trace(&ch, &[f], 100, 0), Err(Error::UnknownChannel(9))));
    }

    #[test]
    fn default_layout_produces_43_channels() {
        let trace = generate_trace(&plant_channels(), &[], 10, 1).unwrap();
        assert_eq!(trace.num_channels(), 43);
        assert!(trace.channels.iter().all(|c| c.len() == 10));
    }

    #[test]
    fn merged_intervals() {
        let ch = scaled_channels(5, 1.0);
        let mk = |onset, duration| FaultSpec {
            onset_time: onset,
            ramp_duration: 0,
            duration,
            affected_channels: vec![0],
            signature: FaultSignature::PressureDrop,
            severity: 1.0,
        };
        let trace = generate_trace(&ch, &[mk(10, 5), mk(12, 10), mk(40, 5)], 60, 0).unwrap();
        assert_eq!(trace.active_intervals(), vec![(10, 22), (40, 45)]);
        assert_eq!(trace.event_starts(), vec![10, 12, 40]);
        assert_eq!(trace.abnormal_mask().iter().filter(|&&m| m).count(), 17);
    }
}
