//! The end-to-end chain: per-sensor stage-1 ensembles, stage-2 refiners,
//! the ratio feature and the transformer, in batch and streaming form.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::feature::{ratio, RatioConfig};
use crate::nn::{Matrix, Mlp};
use crate::plantsim::{SensorTrace, TraceSplit};
use crate::qrnn::{
    stage1_seed, stage2_seed, stage2_training_data, Normalizer, QuantileLevelSet, Stage1Config, Stage1Ensemble, Stage2Config,
    Stage2Refiner, TrainingHistory,
};
use crate::rng;
use crate::transformer::{decide, TransformerConfig, TransformerModel, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QrnnConfig {
    pub levels: QuantileLevelSet,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub ratio: RatioConfig,
}

impl Default for QrnnConfig {
    fn default() -> Self {
        Self {
            levels: QuantileLevelSet::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            ratio: RatioConfig::default(),
        }
    }
}

impl QrnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1.window == 0 {
            return Err(Error::config("qrnn.stage1.window", "must be > 0"));
        }
        self.stage1.fit.validate("qrnn.stage1.fit")?;
        self.stage2.fit.validate("qrnn.stage2.fit")?;
        self.stage1
            .net
            .spec(self.stage1.window)
            .validate()
            .map_err(|e| Error::config("qrnn.stage1.net", e.to_string()))?;
        self.stage2
            .net
            .spec(self.levels.len())
            .validate()
            .map_err(|e| Error::config("qrnn.stage2.net", e.to_string()))?;
        self.ratio
            .validate()
            .map_err(|e| Error::config("qrnn.ratio", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorQrnn {
    pub stage1: Stage1Ensemble,
    pub stage2: Stage2Refiner,
}

/// Training curves of one sensor's networks.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorHistories {
    pub stage1: Vec<TrainingHistory>,
    pub stage2: [TrainingHistory; 2],
}

/// Per-sensor feature streams. Element `i` of every stream belongs to time
/// `offset + i` and is computed from the `window` samples before it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStreams {
    pub offset: usize,
    /// Stage-1 spread `q_max − q_min` in normalized units.
    pub spread: Vec<Vec<f64>>,
    /// Ratio of the refined quartiles in raw units.
    pub ratio: Vec<Vec<f64>>,
}

/// Both QRNN stages for every sensor of a plant.
#[derive(Debug, Clone, PartialEq)]
pub struct QrnnBank {
    pub sensors: Vec<SensorQrnn>,
    pub ratio: RatioConfig,
}

impl QrnnBank {
    /// Trains stage 1 and then stage 2 per sensor on the training part.
    pub fn train(
        trace: &SensorTrace,
        split: &TraceSplit,
        config: &QrnnConfig,
        seed: u64,
    ) -> Result<(Self, Vec<SensorHistories>)> {
        config.validate()?;
        let mut sensors = Vec::with_capacity(trace.num_channels());
        let mut histories = Vec::with_capacity(trace.num_channels());
        for (id, series) in trace.channels.iter().enumerate() {
            let segments = split.train().slices(series);
            let (stage1, h1) = Stage1Ensemble::train(id, &segments, &config.levels, &config.stage1, seed)?;
            let (inputs, targets) = stage2_training_data(&stage1, &segments)?;
            let (stage2, h2) =
                Stage2Refiner::train(id, &inputs, &targets, stage1.normalizer, &config.stage2, seed)?;
            sensors.push(SensorQrnn { stage1, stage2 });
            histories.push(SensorHistories { stage1: h1, stage2: h2 });
        }
        Ok((
            Self {
                sensors,
                ratio: config.ratio,
            },
            histories,
        ))
    }

    pub fn window(&self) -> usize {
        self.sensors.first().map_or(0, |s| s.stage1.window)
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Spread and ratio streams over whole channel series.
    pub fn features(&self, channels: &[Vec<f64>]) -> Result<FeatureStreams> {
        if channels.len() != self.sensors.len() {
            return Err(Error::shape(format!(
                "{} channels for {} sensor models",
                channels.len(),
                self.sensors.len()
            )));
        }
        let w = self.window();
        let mut spread = Vec::with_capacity(channels.len());
        let mut ratios = Vec::with_capacity(channels.len());
        for (sensor, series) in self.sensors.iter().zip(channels) {
            let mut q = sensor.stage1.predict_series_normalized(series)?;
            // the last window forecasts a sample beyond the series
            if q.rows() > 0 {
                q = q.slice_rows(0, q.rows() - 1);
            }
            let last = q.cols() - 1;
            spread.push((0..q.rows()).map(|r| q.get(r, last) - q.get(r, 0)).collect());
            let (lo, hi) = sensor.stage2.refine_normalized(&q)?;
            let n = &sensor.stage2.normalizer;
            ratios.push(
                lo.iter()
                    .zip(&hi)
                    .map(|(&l, &h)| ratio(n.denormalize(l), n.denormalize(h), &self.ratio))
                    .collect(),
            );
        }
        Ok(FeatureStreams {
            offset: w,
            spread,
            ratio: ratios,
        })
    }
}

/// Wall-clock time spent in each stage of one streaming cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub stage1: Duration,
    pub stage2: Duration,
    pub transformer: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.stage1 + self.stage2 + self.transformer
    }
}

/// Output of one streaming cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOutput {
    pub time_index: usize,
    /// `None` until a full feature sequence is buffered.
    pub probability: Option<f64>,
    pub decision: Option<u8>,
    pub times: StageTimes,
}

/// Trained chain plus the decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub qrnn: QrnnBank,
    pub transformer: TransformerModel,
    pub threshold: f64,
}

impl Pipeline {
    pub fn new(qrnn: QrnnBank, transformer: TransformerModel, threshold: f64) -> Result<Self> {
        if transformer.config().input_dim != qrnn.num_sensors() {
            return Err(Error::shape(format!(
                "transformer expects {} features, pipeline has {} sensors",
                transformer.config().input_dim,
                qrnn.num_sensors()
            )));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(Self {
            qrnn,
            transformer,
            threshold,
        })
    }

    /// Freshly initialized networks at the configured widths, with identity
    /// normalization. Useful wherever only the cost of a cycle matters.
    pub fn initialized(
        sensors: usize,
        qrnn: &QrnnConfig,
        transformer: &TransformerConfig,
        seed: u64,
    ) -> Result<Self> {
        qrnn.validate()?;
        let normalizer = Normalizer { mean: 0.0, std: 1.0 };
        let mut bank = Vec::with_capacity(sensors);
        for id in 0..sensors {
            let models = (0..qrnn.levels.len())
                .map(|k| Mlp::new(qrnn.stage1.net.spec(qrnn.stage1.window), stage1_seed(seed, id, k)))
                .collect::<Result<Vec<_>>>()?;
            let spec = qrnn.stage2.net.spec(qrnn.levels.len());
            bank.push(SensorQrnn {
                stage1: Stage1Ensemble {
                    sensor_id: id,
                    levels: qrnn.levels.clone(),
                    window: qrnn.stage1.window,
                    normalizer,
                    models,
                },
                stage2: Stage2Refiner {
                    sensor_id: id,
                    normalizer,
                    lower: Mlp::new(spec.clone(), stage2_seed(seed, id, 0))?,
                    upper: Mlp::new(spec, stage2_seed(seed, id, 1))?,
                },
            });
        }
        let cfg = TransformerConfig {
            input_dim: sensors,
            ..transformer.clone()
        };
        let model = TransformerModel::new(cfg, rng::derive_seed(seed, &[rng::tag("transformer")]))?;
        Self::new(
            QrnnBank {
                sensors: bank,
                ratio: qrnn.ratio,
            },
            model,
            DEFAULT_THRESHOLD,
        )
    }

    pub fn stream(&self) -> StreamState {
        StreamState {
            raw: vec![VecDeque::with_capacity(self.qrnn.window() + 1); self.qrnn.num_sensors()],
            features: VecDeque::with_capacity(self.transformer.config().sequence_length + 1),
            next_time: 0,
        }
    }

    /// Ingests one sample per sensor and runs every stage that has enough
    /// history: a stage-1 forecast per sensor for the new time step, the
    /// stage-2 quartiles and ratio, and the transformer over the newest
    /// `T` ratio vectors.
    pub fn step(&self, state: &mut StreamState, sample: &[f64]) -> Result<CycleOutput> {
        let s = self.qrnn.num_sensors();
        if sample.len() != s {
            return Err(Error::shape(format!("sample has {} values for {s} sensors", sample.len())));
        }
        ensure_finite(sample)?;
        let w = self.qrnn.window();
        let t_len = self.transformer.config().sequence_length;
        let time_index = state.next_time;
        state.next_time += 1;
        let mut times = StageTimes::default();

        if state.raw[0].len() == w {
            let clock = Instant::now();
            let mut vectors = Vec::with_capacity(s);
            for (sensor, buf) in self.qrnn.sensors.iter().zip(&state.raw) {
                let z: Vec<f64> = buf.iter().map(|&v| sensor.stage1.normalizer.normalize(v)).collect();
                vectors.push(sensor.stage1.predict_normalized(&Matrix::row_vector(&z))?);
            }
            times.stage1 = clock.elapsed();

            let clock = Instant::now();
            let mut row = Vec::with_capacity(s);
            for (sensor, q) in self.qrnn.sensors.iter().zip(&vectors) {
                let (lo, hi) = sensor.stage2.refine_normalized(q)?;
                let n = &sensor.stage2.normalizer;
                row.push(ratio(n.denormalize(lo[0]), n.denormalize(hi[0]), &self.qrnn.ratio));
            }
            state.features.push_back(row);
            if state.features.len() > t_len {
                state.features.pop_front();
            }
            times.stage2 = clock.elapsed();
        }
        for (buf, &v) in state.raw.iter_mut().zip(sample) {
            buf.push_back(v);
            if buf.len() > w {
                buf.pop_front();
            }
        }

        let mut probability = None;
        if state.features.len() == t_len {
            let clock = Instant::now();
            let mut m = Matrix::zeros(t_len, s);
            for (r, f) in state.features.iter().enumerate() {
                m.row_mut(r).copy_from_slice(f);
            }
            probability = Some(self.transformer.predict_proba(&m)?);
            times.transformer = clock.elapsed();
        }
        Ok(CycleOutput {
            time_index,
            probability,
            decision: probability.map(|p| decide(p, self.threshold)),
            times,
        })
    }
}

/// Sliding buffers of a streaming pipeline.
#[derive(Debug, Clone)]
pub struct StreamState {
    raw: Vec<VecDeque<f64>>,
    features: VecDeque<Vec<f64>>,
    next_time: usize,
}

impl StreamState {
    /// Number of ratio vectors currently buffered.
    pub fn buffered(&self) -> usize {
        self.features.len()
    }
}
