//! Run configuration: TOML files with dotted sections, `key=value`
//! overrides and path overrides from the environment.
//!
//! ```toml
//! seeds = [0, 1]
//! horizons = [10, 90, 180]
//!
//! [plant]
//! sensors = 8
//!
//! [transformer]
//! model_dim = 64
//! ffn_dim = 128
//!
//! [paths]
//! data_dir = "data"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BenchmarkConfig, Variant};
use crate::pipeline::QrnnConfig;
use crate::plantsim::PlantConfig;
use crate::rng;
use crate::transformer::{TrainConfig, TransformerConfig};

/// Environment variables that override `paths.*`.
pub const PATH_ENV: [(&str, &str); 3] = [
    ("TQRNN_DATA_DIR", "data_dir"),
    ("TQRNN_MODELS_DIR", "models_dir"),
    ("TQRNN_RESULTS_DIR", "results_dir"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub models_dir: PathBuf,
    pub results_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            models_dir: "models".into(),
            results_dir: "results".into(),
        }
    }
}

/// Settings of the streaming latency benchmark. The architecture comes from
/// `qrnn` and `latency.transformer`; sensor count is set separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub sensors: usize,
    pub warmup: usize,
    pub cycles: usize,
    pub seed: u64,
    pub transformer: TransformerConfig,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            sensors: 43,
            warmup: 5,
            cycles: 30,
            seed: 0,
            transformer: TransformerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
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
    pub latency: LatencyConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_benchmark(BenchmarkConfig::default())
    }
}

impl RunConfig {
    pub fn from_benchmark(b: BenchmarkConfig) -> Self {
        Self {
            plant: b.plant,
            split: b.split,
            sequence_length: b.sequence_length,
            stride: b.stride,
            horizons: b.horizons,
            variants: b.variants,
            seeds: b.seeds,
            qrnn: b.qrnn,
            transformer: b.transformer,
            transformer_training: b.transformer_training,
            latency: LatencyConfig::default(),
            paths: PathsConfig::default(),
        }
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            plant: self.plant.clone(),
            split: self.split,
            sequence_length: self.sequence_length,
            stride: self.stride,
            horizons: self.horizons.clone(),
            variants: self.variants.clone(),
            seeds: self.seeds.clone(),
            qrnn: self.qrnn.clone(),
            transformer: self.transformer.clone(),
            transformer_training: self.transformer_training.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark().validate()?;
        if self.latency.sensors == 0 {
            return Err(Error::config("latency.sensors", "must be > 0"));
        }
        if self.latency.cycles < crate::eval::MIN_CYCLES {
            return Err(Error::config(
                "latency.cycles",
                format!("must be at least {}", crate::eval::MIN_CYCLES),
            ));
        }
        TransformerConfig {
            input_dim: self.latency.sensors,
            ..self.latency.transformer.clone()
        }
        .validate()
        .map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("latency.{field}"), message),
            other => other,
        })
    }

    /// Hex digest of everything that shapes trained models; paths and the
    /// latency settings are left out.
    pub fn digest(&self) -> String {
        let b = self.benchmark();
        let body = serde_json::to_string(&b).expect("config serializes");
        format!("{:016x}", rng::tag(&body))
    }

    /// Parses TOML text, then applies `key=value` overrides in order.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    /// Reads `path` (or starts from defaults when `None`), applies the path
    /// environment variables and then `overrides`, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::config("config", format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut all = Vec::new();
        for (var, key) in PATH_ENV {
            if let Ok(v) = std::env::var(var) {
                all.push(format!("paths.{key}={}", toml::Value::String(v)));
            }
        }
        all.extend(overrides.iter().cloned());
        let cfg = Self::from_toml(&text, &all)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let field = e.path().to_string();
            let message = e.inner().message().to_string();
            Error::config(if field == "." { "config".into() } else { field }, message)
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// `a.b.c=value`; the value is read as a TOML value and falls back to a
/// bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must have the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(spec, "empty key in override"));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_and_dotted_keys() {
        let text = "seeds = [3]\ntransformer.model_dim = 16\n[plant]\nsensors = 5\n";
        let cfg = RunConfig::from_toml(text, &[]).unwrap();
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.transformer.model_dim, 16);
        assert_eq!(cfg.plant.sensors, 5);
        assert_eq!(cfg.plant.duration, PlantConfig::default().duration);
    }

    #[test]
    fn overrides_win_over_file() {
        let cfg = RunConfig::from_toml(
            "[plant]\nsensors = 5\n",
            &["plant.sensors=7".into(), "paths.data_dir=/tmp/x".into(), "variants=[\"QR\"]".into()],
        )
        .unwrap();
        assert_eq!(cfg.plant.sensors, 7);
        assert_eq!(cfg.paths.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.variants, vec![Variant::Qr]);
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::from_toml("[transformer]\nmodel_dim = \"wide\"\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "transformer.model_dim"), "{err}");
        let err = RunConfig::from_toml("[qrnn.stage1]\nbogus = 1\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field.starts_with("qrnn.stage1")), "{err}");
        let cfg = RunConfig::from_toml("transformer.model_dim = 33\n", &[]).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "transformer.model_dim"), "{err}");
        let err = RunConfig::from_toml("seeds = [\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn digest_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.models_dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        b.transformer.model_dim = 16;
        assert_ne!(a.digest(), b.digest());
    }
}
