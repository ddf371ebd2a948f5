//! Synthetic beverage-plant recordings with injected fault episodes.

mod channels;
mod faults;
mod io;
mod split;
mod trace;

pub use channels::{
    channels_with_counts, plant_channels, proportional_counts, scaled_channels, BaseSignal,
    ChannelKind, ChannelSpec, Periodic,
};
pub use faults::{
    default_fault_plan, FaultPlanConfig, FaultSignature, FaultSpec, ScheduledFault,
};
pub use io::{read_trace, trace_digest, write_trace, TRACE_FORMAT, TRACE_VERSION};
pub use split::{split_trace, Segment, SplitPart, TraceSplit, TEST, TRAIN, VALIDATION};
pub use trace::{generate_trace, SensorTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub sensors: usize,
    pub duration: usize,
    pub sample_rate: f64,
    pub faults: FaultPlanConfig,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            sensors: 43,
            duration: 20_000,
            sample_rate: 1.0,
            faults: FaultPlanConfig::default(),
        }
    }
}

impl PlantConfig {
    /// Channel layout keeping the plant's kind proportions; 43 sensors give
    /// the full plant.
    pub fn channels(&self) -> Vec<ChannelSpec> {
        scaled_channels(self.sensors, self.sample_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors == 0 {
            return Err(Error::config("plant.sensors", "must be > 0"));
        }
        if self.duration == 0 {
            return Err(Error::config("plant.duration", "must be > 0"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::config("plant.sample_rate", "must be > 0"));
        }
        self.faults
            .validate()
            .map_err(|e| Error::config("plant.faults", e.to_string()))
    }
}

/// Channel layout, seeded fault plan and trace in one call.
pub fn generate_plant(config: &PlantConfig, seed: u64) -> Result<SensorTrace> {
    config.validate()?;
    let channels = config.channels();
    let faults = default_fault_plan(&channels, config.duration, &config.faults, seed)?;
    generate_trace(&channels, &faults, config.duration, seed)
}
