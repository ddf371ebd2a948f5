use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::channels::{ChannelKind, ChannelSpec};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultSignature {
    /// Scales the noise-free level by `1 + severity · g`.
    AmplitudeGrowth,
    /// Upward spikes of `4 · severity · noise_std` every fourth sample once
    /// the ramp passes 90%.
    SpikeTrain,
    /// Lowers the level by `0.1 · severity · g` of the channel mean.
    PressureDrop,
    /// Raises the level by `0.05 · severity · g` of the channel mean.
    TemperatureRamp,
}

impl FaultSignature {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultSignature::AmplitudeGrowth => "amplitude_growth",
            FaultSignature::SpikeTrain => "spike_train",
            FaultSignature::PressureDrop => "pressure_drop",
            FaultSignature::TemperatureRamp => "temperature_ramp",
        }
    }
}

/// One injected fault. The signature intensity `g` rises linearly from 0 at
/// `onset_time - ramp_duration` to 1 at `onset_time`, holds 1 until
/// `onset_time + duration`, then drops to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub onset_time: usize,
    pub ramp_duration: usize,
    pub duration: usize,
    pub affected_channels: Vec<usize>,
    pub signature: FaultSignature,
    pub severity: f64,
}

impl FaultSpec {
    pub fn ramp_start(&self) -> usize {
        self.onset_time.saturating_sub(self.ramp_duration)
    }

    pub fn end_time(&self) -> usize {
        self.onset_time + self.duration
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if !(self.severity > 0.0) || !self.severity.is_finite() {
            return Err(Error::invalid("fault severity must be > 0"));
        }
        if self.duration == 0 {
            return Err(Error::invalid("fault duration must be > 0"));
        }
        if self.ramp_duration > self.onset_time {
            return Err(Error::invalid(format!(
                "fault at {} ramps in before the trace starts",
                self.onset_time
            )));
        }
        if let Some(&c) = self.affected_channels.iter().find(|&&c| c >= channels) {
            return Err(Error::UnknownChannel(c));
        }
        Ok(())
    }

    /// Signature intensity at sample `t`.
    pub fn intensity(&self, t: usize) -> f64 {
        if t >= self.end_time() || t < self.ramp_start() {
            0.0
        } else if t >= self.onset_time {
            1.0
        } else {
            (t - self.ramp_start()) as f64 / self.ramp_duration as f64
        }
    }
}

/// Fault onset, end and spec as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub start: usize,
    pub end: usize,
    pub fault: FaultSpec,
}

/// Alternating normal gaps and fault episodes. All bounds are inclusive
/// sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultPlanConfig {
    pub gap: (usize, usize),
    pub episode: (usize, usize),
    pub ramp: (usize, usize),
    pub severity: (f64, f64),
}

impl Default for FaultPlanConfig {
    fn default() -> Self {
        Self {
            gap: (300, 600),
            episode: (300, 600),
            ramp: (100, 300),
            severity: (1.5, 2.5),
        }
    }
}

impl FaultPlanConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (usize, usize)| a > 0 && a <= b;
        if !ordered(self.gap) || !ordered(self.episode) || !ordered(self.ramp) {
            return Err(Error::invalid("fault plan ranges must be positive and ordered"));
        }
        if !(self.severity.0 > 0.0 && self.severity.0 <= self.severity.1) {
            return Err(Error::invalid("fault severity range must be positive and ordered"));
        }
        Ok(())
    }
}

/// Signature groups injected together in one episode.
const ARCHETYPES: [&[(FaultSignature, ChannelKind)]; 3] = [
    // bearing wear
    &[
        (FaultSignature::AmplitudeGrowth, ChannelKind::Vibration),
        (FaultSignature::TemperatureRamp, ChannelKind::Temperature),
        (FaultSignature::SpikeTrain, ChannelKind::Health),
    ],
    // leak
    &[
        (FaultSignature::PressureDrop, ChannelKind::Pressure),
        (FaultSignature::PressureDrop, ChannelKind::Flow),
        (FaultSignature::SpikeTrain, ChannelKind::Vibration),
    ],
    // blockage
    &[
        (FaultSignature::TemperatureRamp, ChannelKind::Pressure),
        (FaultSignature::PressureDrop, ChannelKind::Flow),
        (FaultSignature::SpikeTrain, ChannelKind::Health),
    ],
];

/// Seeded schedule of fault episodes covering `[0, duration)`. Each episode
/// follows one of three archetypes and carries one [`FaultSpec`] per
/// affected channel kind; specs of an episode share onset, ramp and duration.
pub fn default_fault_plan(
    channels: &[ChannelSpec],
    duration: usize,
    plan: &FaultPlanConfig,
    seed: u64,
) -> Result<Vec<FaultSpec>> {
    plan.validate()?;
    let mut r = rng::stream(seed, &[rng::tag("fault-plan")]);
    let mut faults = Vec::new();
    let mut t = 0usize;
    loop {
        let gap = r.gen_range(plan.gap.0..=plan.gap.1);
        let episode = r.gen_range(plan.episode.0..=plan.episode.1);
        let ramp = r.gen_range(plan.ramp.0..=plan.ramp.1).min(gap);
        let archetype = ARCHETYPES[r.gen_range(0..ARCHETYPES.len())];
        let onset = t + gap;
        if onset + episode > duration {
            break;
        }
        for &(signature, kind) in archetype {
            let affected: Vec<usize> = channels
                .iter()
                .filter(|c| c.kind == kind)
                .map(|c| c.id)
                .collect();
            let severity = r.gen_range(plan.severity.0..=plan.severity.1);
            if affected.is_empty() {
                continue;
            }
            faults.push(FaultSpec {
                onset_time: onset,
                ramp_duration: ramp,
                duration: episode,
                affected_channels: affected,
                signature,
                severity,
            });
        }
        t = onset + episode;
    }
    Ok(faults)
}

/// Adds the signature of `fault` to `values` for channel `spec`.
pub(crate) fn inject(fault: &FaultSpec, spec: &ChannelSpec, values: &mut [f64]) {
    let start = fault.ramp_start();
    let end = fault.end_time().min(values.len());
    let mean = spec.base.mean.abs();
    for (t, v) in values.iter_mut().enumerate().take(end).skip(start) {
        let g = fault.intensity(t);
        let s = fault.severity;
        *v += match fault.signature {
            FaultSignature::AmplitudeGrowth => s * g * spec.base.deterministic(t),
            FaultSignature::PressureDrop => -0.1 * s * g * mean,
            FaultSignature::TemperatureRamp => 0.05 * s * g * mean,
            FaultSignature::SpikeTrain => {
                if g >= 0.9 && t % 4 == fault.onset_time % 4 {
                    4.0 * s * spec.base.noise_std.max(1e-3 * mean)
                } else {
                    0.0
                }
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::channels::scaled_channels;

    fn fault(onset: usize, ramp: usize) -> FaultSpec {
        FaultSpec {
            onset_time: onset,
            ramp_duration: ramp,
            duration: 50,
            affected_channels: vec![0],
            signature: FaultSignature::PressureDrop,
            severity: 1.0,
        }
    }

    #[test]
    fn intensity_profile() {
        let f = fault(100, 20);
        assert_eq!(f.intensity(79), 0.0);
        assert_eq!(f.intensity(80), 0.0);
        assert_eq!(f.intensity(90), 0.5);
        assert_eq!(f.intensity(100), 1.0);
        assert_eq!(f.intensity(149), 1.0);
        assert_eq!(f.intensity(150), 0.0);
    }

    #[test]
    fn validation() {
        assert!(fault(10, 20).validate(1).is_err());
        assert!(matches!(fault(100, 20).validate(0), Err(Error::UnknownChannel(0))));
        let mut f = fault(100, 20);
        f.severity = 0.0;
        assert!(f.validate(1).is_err());
    }

    #[test]
    fn plan_is_seeded_and_ordered() {
        let ch = scaled_channels(8, 1.0);
        let plan = FaultPlanConfig::default();
        let a = default_fault_plan(&ch, 20_000, &plan, 4).unwrap();
        assert_eq!(a, default_fault_plan(&ch, 20_000, &plan, 4).unwrap());
        assert_ne!(a, default_fault_plan(&ch, 20_000, &plan, 5).unwrap());
        assert!(!a.is_empty());
        for f in &a {
            f.validate(ch.len()).unwrap();
            assert!(f.end_time() <= 20_000);
        }
        let mut onsets: Vec<usize> = a.iter().map(|f| f.onset_time).collect();
        onsets.dedup();
        for w in onsets.windows(2) {
            assert!(w[1] >= w[0] + plan.gap.0);
        }
    }
}
