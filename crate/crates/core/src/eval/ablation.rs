use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::detector::ThresholdDetector;
use super::metrics::{confusion, ConfusionMatrix, MetricSummary};
use crate::error::{Error, Result};
use crate::feature::{assemble_sequences, FeatureSequence};
use crate::nn::Matrix;
use crate::pipeline::{FeatureStreams, QrnnBank, QrnnConfig};
use crate::plantsim::{generate_plant, split_trace, PlantConfig, SensorTrace, TraceSplit, TRAIN, VALIDATION};
use crate::rng;
use crate::transformer::{
    decide, train_transformer, TrainConfig, TrainingHistory, TransformerConfig, TransformerModel, DEFAULT_THRESHOLD,
};

/// The four configurations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Threshold on the stage-1 quantile spread.
    #[serde(rename = "QR")]
    Qr,
    /// Threshold on the ratio feature from both QRNN stages.
    #[serde(rename = "QR2")]
    Qr2,
    /// Transformer on raw per-timestep sensor vectors.
    #[serde(rename = "Transformer")]
    TransformerOnly,
    /// Transformer on the ratio feature.
    All,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Qr, Variant::Qr2, Variant::TransformerOnly, Variant::All];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Qr => "QR",
            Variant::Qr2 => "QR2",
            Variant::TransformerOnly => "Transformer",
            Variant::All => "All",
        }
    }

    pub fn uses_transformer(self) -> bool {
        matches!(self, Variant::TransformerOnly | Variant::All)
    }

    pub fn uses_qrnn(self) -> bool {
        !matches!(self, Variant::TransformerOnly)
    }

    fn input(self) -> Input {
        match self {
            Variant::Qr => Input::Spread,
            Variant::Qr2 | Variant::All => Input::Ratio,
            Variant::TransformerOnly => Input::Raw,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qr" => Ok(Variant::Qr),
            "qr2" => Ok(Variant::Qr2),
            "transformer" | "transformeronly" | "transformer-only" => Ok(Variant::TransformerOnly),
            "all" => Ok(Variant::All),
            _ => Err(Error::invalid(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub variant: Variant,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Input {
    Raw,
    Spread,
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub plant: PlantConfig,
    pub split: [f64; 3],
    pub sequence_length: usize,
    pub stride: usize,
    pub horizons: Vec<usize>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub qrnn: QrnnConfig,
    pub transformer: TransformerConfig,
    pub transformer_training: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig {
                sensors: 8,
                ..PlantConfig::default()
            },
            split: [0.6, 0.2, 0.2],
            sequence_length: 60,
            stride: 10,
            horizons: vec![10, 90, 180],
            variants: Variant::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            qrnn: QrnnConfig::default(),
            transformer: TransformerConfig {
                model_dim: 32,
                ffn_dim: 64,
                sequence_length: 60,
                input_dim: 8,
                ..TransformerConfig::default()
            },
            transformer_training: TrainConfig {
                epochs: 12,
                restore_best: true,
                ..TrainConfig::default()
            },
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.qrnn.validate()?;
        self.transformer_training.validate("transformer_training")?;
        if self.sequence_length == 0 || self.stride == 0 {
            return Err(Error::config("sequence_length", "length and stride must be > 0"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::config("horizons", "need at least one horizon, all > 0"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "need at least one variant"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.split.iter().any(|r| !(0.0..=1.0).contains(r)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("split", "ratios must lie in [0, 1] and sum to 1"));
        }
        self.transformer_for(self.plant.sensors).validate()
    }

    /// Transformer architecture with the input width and length filled in.
    pub fn transformer_for(&self, input_dim: usize) -> TransformerConfig {
        TransformerConfig {
            input_dim,
            sequence_length: self.sequence_length,
            ..self.transformer.clone()
        }
    }
}

/// Labeled sequences of one variant input at one horizon, per split part.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<FeatureSequence>,
    pub validation: Vec<FeatureSequence>,
    pub test: Vec<FeatureSequence>,
}

impl Dataset {
    pub fn part(&self, part: usize) -> &[FeatureSequence] {
        match part {
            TRAIN => &self.train,
            VALIDATION => &self.validation,
            _ => &self.test,
        }
    }
}

fn refs(seqs: &[FeatureSequence]) -> Vec<&Matrix> {
    seqs.iter().map(|s| &s.values).collect()
}

fn labels(seqs: &[FeatureSequence]) -> Vec<u8> {
    seqs.iter().map(|s| s.label.unwrap_or(0)).collect()
}

/// A seed's trace, its split and whatever models have been trained on it.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub trace: SensorTrace,
    pub split: TraceSplit,
    /// Lookback of the stage-1 windows; sequences start this late so that
    /// every variant sees the same timeline.
    pub window: usize,
    pub streams: Option<FeatureStreams>,
    pub transformers: BTreeMap<(Variant, usize), TransformerModel>,
}

impl SeedContext {
    pub fn new(trace: SensorTrace, split: TraceSplit, window: usize, seed: u64) -> Self {
        Self {
            seed,
            trace,
            split,
            window,
            streams: None,
            transformers: BTreeMap::new(),
        }
    }

    fn streams_for(&self, input: Input) -> Result<(Vec<&[f64]>, usize)> {
        let w = self.window;
        match input {
            Input::Raw => Ok((self.trace.channels.iter().map(|c| &c[w.min(c.len())..]).collect(), w)),
            Input::Spread | Input::Ratio => {
                let streams = self.streams.as_ref().ok_or_else(|| {
                    Error::MissingComponent("QRNN feature streams (train the quantile networks first)".into())
                })?;
                if streams.offset != w {
                    return Err(Error::shape(format!(
                        "feature streams start at {}, benchmark window is {w}",
                        streams.offset
                    )));
                }
                let s = if input == Input::Spread { &streams.spread } else { &streams.ratio };
                Ok((s.iter().map(Vec::as_slice).collect(), w))
            }
        }
    }

    /// Sequences of `length` steps every `stride` steps, labeled for
    /// `horizon`. A sequence is kept only if its inputs, including the
    /// stage-1 lookback, lie inside one split part and outside every active
    /// fault, and its whole horizon lies inside the trace.
    fn dataset(&self, input: Input, length: usize, stride: usize, horizon: usize) -> Result<Dataset> {
        let (streams, offset) = self.streams_for(input)?;
        let seqs = assemble_sequences(&streams, length, stride, offset)?;
        let starts = self.trace.event_starts();
        let active = self.trace.active_intervals();
        let w = self.window;
        let mut out = Dataset::default();
        for seq in seqs {
            let first = seq.start_time - w;
            let last = seq.end_time;
            if last + horizon >= self.trace.duration {
                continue;
            }
            if active.iter().any(|&(a, b)| a <= last && first < b) {
                continue;
            }
            let part = self.split.part_of(first);
            if !self.split.covers(part, first, last + 1) {
                continue;
            }
            let seq = seq.labeled(&starts, horizon)?;
            match part {
                TRAIN => out.train.push(seq),
                VALIDATION => out.validation.push(seq),
                _ => out.test.push(seq),
            }
        }
        Ok(out)
    }

    /// Every sequence of the variant's input over the whole trace, labeled
    /// for `horizon`, without the split and fault filters.
    pub fn all_sequences(&self, variant: Variant, config: &BenchmarkConfig, horizon: usize) -> Result<Vec<FeatureSequence>> {
        let (streams, offset) = self.streams_for(variant.input())?;
        let starts = self.trace.event_starts();
        assemble_sequences(&streams, config.sequence_length, config.stride, offset)?
            .into_iter()
            .map(|s| s.labeled(&starts, horizon))
            .collect()
    }

    pub fn dataset_for(&self, variant: Variant, config: &BenchmarkConfig, horizon: usize) -> Result<Dataset> {
        self.dataset(variant.input(), config.sequence_length, config.stride, horizon)
    }
}

/// Result of one (variant, horizon, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub variant: Variant,
    pub horizon: usize,
    pub seed: u64,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSummary,
    pub train_sequences: usize,
    pub test_sequences: usize,
}

pub fn transformer_seed(seed: u64, variant: Variant, horizon: usize) -> u64 {
    rng::derive_seed(seed, &[rng::tag("transformer"), rng::tag(variant.as_str()), horizon as u64])
}

/// Trains the transformer for a transformer variant at one horizon.
pub fn train_variant_transformer(
    ctx: &SeedContext,
    config: &BenchmarkConfig,
    variant: Variant,
    horizon: usize,
) -> Result<(TransformerModel, TrainingHistory)> {
    if !variant.uses_transformer() {
        return Err(Error::invalid(format!("variant {variant} has no transformer")));
    }
    let data = ctx.dataset_for(variant, config, horizon)?;
    let seed = transformer_seed(ctx.seed, variant, horizon);
    let mut model = TransformerModel::new(config.transformer_for(ctx.trace.num_channels()), seed)?;
    let history = train_transformer(&mut model, &data.train, &data.validation, &config.transformer_training, seed)?;
    Ok((model, history))
}

/// Scores one cell with the components already present in `ctx`. Transformer
/// variants classify at probability 0.5; detector variants pick their
/// threshold on the validation part for maximum F1.
pub fn evaluate_cell(
    ctx: &SeedContext,
    config: &BenchmarkConfig,
    variant: Variant,
    horizon: usize,
) -> Result<CellResult> {
    let data = ctx.dataset_for(variant, config, horizon)?;
    if data.test.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no test sequences for {variant} at horizon {horizon}"
        )));
    }
    if data.validation.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no validation sequences for {variant} at horizon {horizon}"
        )));
    }
    let (threshold, predictions) = if variant.uses_transformer() {
        let model = ctx.transformers.get(&(variant, horizon)).ok_or_else(|| {
            Error::MissingComponent(format!("transformer for {variant} at horizon {horizon}"))
        })?;
        let test = model.predict_batch(&refs(&data.test))?;
        let preds = test.iter().map(|&p| decide(p, DEFAULT_THRESHOLD)).collect::<Vec<_>>();
        (DEFAULT_THRESHOLD, preds)
    } else {
        let mut det = ThresholdDetector::fit(&refs(&data.train))?;
        det.calibrate(&refs(&data.validation), &labels(&data.validation))?;
        (det.threshold, det.predict(&refs(&data.test))?)
    };
    let cm = confusion(&predictions, &labels(&data.test))?;
    Ok(CellResult {
        variant,
        horizon,
        seed: ctx.seed,
        threshold,
        confusion: cm,
        metrics: cm.summary(),
        train_sequences: data.train.len(),
        test_sequences: data.test.len(),
    })
}

/// Generates the seed's plant, trains every component the configured
/// variants need and scores each (variant, horizon) cell.
pub fn run_seed(config: &BenchmarkConfig, seed: u64, progress: &mut dyn FnMut(&str)) -> Result<Vec<CellResult>> {
    let trace = generate_plant(&config.plant, seed)?;
    let split = split_trace(&trace, (config.split[0], config.split[1], config.split[2]))?;
    let mut ctx = SeedContext::new(trace, split, config.qrnn.stage1.window, seed);
    if config.variants.iter().any(|v| v.uses_qrnn()) {
        progress(&format!("seed {seed}: training quantile networks"));
        let (bank, _) = QrnnBank::train(&ctx.trace, &ctx.split, &config.qrnn, seed)?;
        ctx.streams = Some(bank.features(&ctx.trace.channels)?);
    }
    let mut cells = Vec::new();
    for &h in &config.horizons {
        for &v in &config.variants {
            if v.uses_transformer() {
                progress(&format!("seed {seed}: training transformer for {v} at horizon {h}"));
                let (model, _) = train_variant_transformer(&ctx, config, v, h)?;
                ctx.transformers.insert((v, h), model);
            }
            cells.push(evaluate_cell(&ctx, config, v, h)?);
        }
    }
    Ok(cells)
}

/// Every cell over every configured seed.
pub fn run_ablation(config: &BenchmarkConfig, progress: &mut dyn FnMut(&str)) -> Result<Vec<CellResult>> {
    config.validate()?;
    let mut cells = Vec::new();
    for &seed in &config.seeds {
        cells.extend(run_seed(config, seed, progress)?);
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::TEST;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn missing_components_are_named() {
        let cfg = BenchmarkConfig {
            plant: PlantConfig {
                sensors: 5,
                duration: 3000,
                ..PlantConfig::default()
            },
            ..BenchmarkConfig::default()
        };
        let trace = generate_plant(&cfg.plant, 1).unwrap();
        let split = split_trace(&trace, (0.6, 0.2, 0.2)).unwrap();
        let ctx = SeedContext::new(trace, split, 32, 1);
        let err = evaluate_cell(&ctx, &cfg, Variant::Qr2, 10).unwrap_err();
        assert!(matches!(err, Error::MissingComponent(ref m) if m.contains("QRNN")));
        let err = evaluate_cell(&ctx, &cfg, Variant::TransformerOnly, 10).unwrap_err();
        assert!(matches!(err, Error::MissingComponent(ref m) if m.contains("transformer")));
    }

    #[test]
    fn sequences_avoid_faults_and_split_boundaries() {
        let cfg = BenchmarkConfig::default();
        let plant = PlantConfig {
            sensors: 5,
            duration: 6000,
            ..PlantConfig::default()
        };
        let trace = generate_plant(&plant, 3).unwrap();
        let split = split_trace(&trace, (0.6, 0.2, 0.2)).unwrap();
        let ctx = SeedContext::new(trace, split, 32, 3);
        let data = ctx.dataset_for(Variant::TransformerOnly, &cfg, 90).unwrap();
        let mask = ctx.trace.abnormal_mask();
        for part in [TRAIN, VALIDATION, TEST] {
            for s in data.part(part) {
                assert!(ctx.split.covers(part, s.start_time - 32, s.end_time + 1));
                assert!((s.start_time - 32..=s.end_time).all(|t| !mask[t]));
                assert_eq!(s.values.row(0), ctx.trace.sample(s.start_time).as_slice());
            }
        }
        assert!(!data.train.is_empty());
        assert!(data.train.iter().any(|s| s.label == Some(1)));
    }
}
