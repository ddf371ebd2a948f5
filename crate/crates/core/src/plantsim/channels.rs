use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Vibration,
    Flow,
    Pressure,
    Health,
    Temperature,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 5] = [
        ChannelKind::Vibration,
        ChannelKind::Flow,
        ChannelKind::Pressure,
        ChannelKind::Health,
        ChannelKind::Temperature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Vibration => "vibration",
            ChannelKind::Flow => "flow",
            ChannelKind::Pressure => "pressure",
            ChannelKind::Health => "health",
            ChannelKind::Temperature => "temperature",
        }
    }

    /// Channel count per kind in the full plant layout.
    pub fn plant_count(self) -> usize {
        match self {
            ChannelKind::Vibration => 6,
            ChannelKind::Flow => 7,
            ChannelKind::Pressure => 18,
            ChannelKind::Health => 8,
            ChannelKind::Temperature => 4,
        }
    }
}

/// Sinusoid with period in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodic {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSignal {
    pub mean: f64,
    pub periodic: Vec<Periodic>,
    pub noise_std: f64,
}

impl BaseSignal {
    /// Noise-free value at sample `t`.
    pub fn deterministic(&self, t: usize) -> f64 {
        let t = t as f64;
        self.mean
            + self
                .periodic
                .iter()
                .map(|p| p.amplitude * (std::f64::consts::TAU * t / p.period + p.phase).sin())
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub id: usize,
    pub name: String,
    pub kind: ChannelKind,
    pub base: BaseSignal,
    /// Samples per second.
    pub sample_rate: f64,
    /// Physical sensing axes aggregated into this one channel.
    pub axes: u8,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        let b = &self.base;
        if !b.mean.is_finite() || !(b.noise_std >= 0.0) || !b.noise_std.is_finite() {
            return Err(Error::invalid(format!("channel {}: invalid base signal", self.id)));
        }
        if b.periodic.iter().any(|p| !(p.period > 0.0) || !p.amplitude.is_finite()) {
            return Err(Error::invalid(format!(
                "channel {}: periodic components need a positive period",
                self.id
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid(format!("channel {}: sample rate must be > 0", self.id)));
        }
        Ok(())
    }
}

/// Base signal for the `index`-th channel of a kind. Every kind has a
/// strictly positive operating level.
fn base_for(kind: ChannelKind, index: usize) -> BaseSignal {
    let k = index as f64;
    let wave = |amplitude: f64, period: f64| Periodic {
        amplitude,
        period,
        phase: 0.7 * k,
    };
    match kind {
        ChannelKind::Vibration => BaseSignal {
            mean: 2.0 + 0.1 * k,
            periodic: vec![wave(0.3, 17.0 + 2.0 * k)],
            noise_std: 0.15,
        },
        ChannelKind::Flow => BaseSignal {
            mean: 12.0 + 0.5 * k,
            periodic: vec![wave(0.8, 120.0 + 10.0 * k)],
            noise_std: 0.3,
        },
        ChannelKind::Pressure => BaseSignal {
            mean: 5.0 + 0.2 * k,
            periodic: vec![wave(0.15, 45.0 + 3.0 * k)],
            noise_std: 0.12,
        },
        ChannelKind::Health => BaseSignal {
            mean: 1.0,
            periodic: vec![],
            noise_std: 0.02,
        },
        ChannelKind::Temperature => BaseSignal {
            mean: 60.0 + 2.0 * k,
            periodic: vec![wave(0.5, 600.0 + 60.0 * k)],
            noise_std: 0.25,
        },
    }
}

/// Channel layout with the given count per kind, in `ChannelKind::ALL` order.
pub fn channels_with_counts(counts: &[(ChannelKind, usize)], sample_rate: f64) -> Vec<ChannelSpec> {
    let mut out = Vec::new();
    for kind in ChannelKind::ALL {
        let n = counts
            .iter()
            .filter(|(k, _)| *k == kind)
            .map(|(_, n)| *n)
            .sum::<usize>();
        for i in 0..n {
            out.push(ChannelSpec {
                id: out.len(),
                name: format!("{}_{}", kind.as_str(), i),
                kind,
                base: base_for(kind, i),
                sample_rate,
                axes: if kind == ChannelKind::Vibration { 3 } else { 1 },
            });
        }
    }
    out
}

/// The full 43-channel plant layout at 1 Hz.
pub fn plant_channels() -> Vec<ChannelSpec> {
    let counts: Vec<_> = ChannelKind::ALL.iter().map(|&k| (k, k.plant_count())).collect();
    channels_with_counts(&counts, 1.0)
}

/// Splits `total` channels across kinds in proportion to the plant layout
/// by largest remainder, ties going to the earlier kind, with every kind
/// keeping at least one channel when `total >= 5`.
pub fn proportional_counts(total: usize) -> Vec<(ChannelKind, usize)> {
    let plant: usize = ChannelKind::ALL.iter().map(|k| k.plant_count()).sum();
    let floor_share = total >= ChannelKind::ALL.len();
    let mut counts: Vec<(ChannelKind, usize, f64)> = ChannelKind::ALL
        .iter()
        .map(|&k| {
            let exact = total as f64 * k.plant_count() as f64 / plant as f64;
            let base = exact.floor() as usize;
            let base = if floor_share { base.max(1) } else { base };
            (k, base, exact - base as f64)
        })
        .collect();
    let mut assigned: usize = counts.iter().map(|c| c.1).sum();
    while assigned > total {
        let i = (0..counts.len())
            .filter(|&i| counts[i].1 > 1)
            .min_by(|&a, &b| counts[a].2.total_cmp(&counts[b].2))
            .expect("some kind has more than one channel");
        counts[i].1 -= 1;
        counts[i].2 = 1.0;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].2.total_cmp(&counts[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(total - assigned) {
        counts[i].1 += 1;
    }
    counts.into_iter().map(|(k, n, _)| (k, n)).collect()
}

/// A `total`-channel subset that keeps the plant's kind proportions.
pub fn scaled_channels(total: usize, sample_rate: f64) -> Vec<ChannelSpec> {
    channels_with_counts(&proportional_counts(total), sample_rate)
}
