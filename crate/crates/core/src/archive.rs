//! Versioned plain-text model archives.
//!
//! ```text
//! TQRNN-ARCHIVE 1
//! kind transformer
//! digest 726c21b8f314b45e
//! section model 10 f4ef3ced7502c1d8
//! variant All
//! horizon 10
//! threshold 3fe0000000000000
//! num_layers 1
//! ...
//! input_dim 3
//! section standardization 2 2e3ad2025f19098d
//! shift 3fefbf6125a00c6f 3ff00f1bc91eef65 3ff01d10fc4123c1
//! scale 3f8ac6a9b8e8f0c0 3f77a485f5685aab 3f661f99df965804
//! section params 74 d484d877e85e1dbc
//! tensors 18
//! tensor in.w 3 8
//! bfc577b10f9ef262 bfa244f4b9e3e09d ...
//! ...
//! end 3
//! ```
//!
//! Each `section <name> <lines> <checksum>` header is followed by exactly
//! `<lines>` body lines; the checksum is the 64-bit FNV-1a hash of those
//! lines, each terminated by `\n`. Every float is written as the 16 hex
//! digits of its IEEE-754 bit pattern, so values load back bit-identical.
//! The final `end <sections>` line guards against truncation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::Variant;
use crate::feature::RatioConfig;
use crate::nn::{BatchNormState, LayerKind, LayerSpec, Matrix, Mlp, MlpSpec, ParameterSet};
use crate::pipeline::{QrnnBank, SensorQrnn};
use crate::qrnn::{Normalizer, QuantileLevelSet, Stage1Ensemble, Stage2Refiner};
use crate::transformer::{TransformerConfig, TransformerModel};

pub const ARCHIVE_MAGIC: &str = "TQRNN-ARCHIVE";
pub const ARCHIVE_VERSION: u32 = 1;

pub const KIND_QRNN: &str = "qrnn";
pub const KIND_TRANSFORMER: &str = "transformer";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub lines: Vec<String>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lines: Vec::new(),
        }
    }

    pub fn checksum(&self) -> u64 {
        checksum(&self.lines)
    }

    fn push(&mut self, line: String) {
        self.lines.push(line);
    }

    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        self.push(format!("{key} {value}"));
    }

    fn floats(&mut self, key: &str, values: &[f64]) {
        let mut line = key.to_string();
        for &v in values {
            line.push(' ');
            line.push_str(&hex(v));
        }
        self.push(line);
    }

    fn tensor(&mut self, name: &str, m: &Matrix) {
        self.push(format!("tensor {name} {} {}", m.rows(), m.cols()));
        for r in 0..m.rows() {
            self.push(m.row(r).iter().map(|&v| hex(v)).collect::<Vec<_>>().join(" "));
        }
    }

    fn reader(&self) -> SectionReader<'_> {
        SectionReader { section: self, pos: 0 }
    }
}

fn checksum(lines: &[String]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for line in lines {
        for b in line.bytes().chain(std::iter::once(b'\n')) {
            h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

/// A parsed or assembled archive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Archive {
    pub kind: String,
    /// Digest of the configuration the model was trained under.
    pub digest: String,
    pub sections: Vec<Section>,
}

impl Archive {
    pub fn new(kind: impl Into<String>, digest: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            digest: digest.into(),
            sections: Vec::new(),
        }
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::archive(name, "missing section"))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::archive("header", format!("archive holds a `{}` model, expected `{kind}`", self.kind)));
        }
        Ok(())
    }

    /// Warning text when the archive was written under a different
    /// configuration digest.
    pub fn digest_warning(&self, expected: &str) -> Option<String> {
        (self.digest != expected).then(|| {
            format!(
                "{} archive was trained under config digest {}, current config digest is {expected}",
                self.kind, self.digest
            )
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{ARCHIVE_MAGIC} {ARCHIVE_VERSION}")?;
        writeln!(w, "kind {}", self.kind)?;
        writeln!(w, "digest {}", self.digest)?;
        for s in &self.sections {
            writeln!(w, "section {} {} {:016x}", s.name, s.lines.len(), s.checksum())?;
            for line in &s.lines {
                writeln!(w, "{line}")?;
            }
        }
        writeln!(w, "end {}", self.sections.len())?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(line) => Ok(line?),
                None => Err(Error::archive(what, "truncated archive")),
            }
        };
        let first = next("header")?;
        let version = first
            .strip_prefix(ARCHIVE_MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::archive("header", "not a model archive"))?;
        let found: u32 = version
            .parse()
            .map_err(|_| Error::archive("header", format!("bad format version `{version}`")))?;
        if found != ARCHIVE_VERSION {
            return Err(Error::ArchiveVersion {
                found,
                expected: ARCHIVE_VERSION,
            });
        }
        let kind = header_field(&next("header")?, "kind")?;
        let digest = header_field(&next("header")?, "digest")?;
        let mut archive = Archive::new(kind, digest);
        loop {
            let line = next("end")?;
            let tokens: Vec<&str> = line.split(' ').collect();
            match tokens.as_slice() {
                ["end", n] => {
                    if n.parse::<usize>().ok() != Some(archive.sections.len()) {
                        return Err(Error::archive(
                            "end",
                            format!("end marker counts {n} sections, found {}", archive.sections.len()),
                        ));
                    }
                    return Ok(archive);
                }
                ["section", name, count, sum] => {
                    let count: usize = count
                        .parse()
                        .map_err(|_| Error::archive(*name, format!("bad line count `{count}`")))?;
                    let stored = u64::from_str_radix(sum, 16)
                        .map_err(|_| Error::archive(*name, format!("bad checksum `{sum}`")))?;
                    let mut section = Section::new(*name);
                    for i in 0..count {
                        let line = next(name).map_err(|_| {
                            Error::archive(*name, format!("truncated: {i} of {count} lines present"))
                        })?;
                        section.push(line);
                    }
                    let computed = section.checksum();
                    if computed != stored {
                        return Err(Error::archive(
                            *name,
                            format!("checksum mismatch (stored {stored:016x}, computed {computed:016x})"),
                        ));
                    }
                    archive.sections.push(section);
                }
                _ => return Err(Error::archive("structure", format!("unexpected line `{}`", truncate(&line)))),
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        self.write(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| Error::MissingComponent(format!("model archive {}: {e}", path.display())))?;
        Self::read(BufReader::new(file))
    }
}

fn header_field(line: &str, key: &str) -> Result<String> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(str::to_string)
        .ok_or_else(|| Error::archive("header", format!("expected `{key}` line")))
}

fn truncate(line: &str) -> &str {
    match line.char_indices().nth(40) {
        Some((i, _)) => &line[..i],
        None => line,
    }
}

struct SectionReader<'a> {
    section: &'a Section,
    pos: usize,
}

impl<'a> SectionReader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::archive(&self.section.name, format!("line {}: {}", self.pos, message.into()))
    }

    fn line(&mut self) -> Result<&'a str> {
        let line = self
            .section
            .lines
            .get(self.pos)
            .ok_or_else(|| Error::archive(&self.section.name, "unexpected end of section"))?;
        self.pos += 1;
        Ok(line)
    }

    /// Tokens after `key` on the next line.
    fn kv(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.line()?;
        let mut tokens = line.split(' ');
        if tokens.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(tokens.filter(|t| !t.is_empty()).collect())
    }

    fn one(&mut self, key: &str) -> Result<&'a str> {
        let v = self.kv(key)?;
        match v.as_slice() {
            [x] => Ok(x),
            _ => Err(self.err(format!("`{key}` takes one value"))),
        }
    }

    fn usize(&mut self, key: &str) -> Result<usize> {
        let v = self.one(key)?;
        v.parse().map_err(|_| self.err(format!("bad integer `{v}` for `{key}`")))
    }

    fn float(&mut self, key: &str) -> Result<f64> {
        let v = self.one(key)?;
        self.parse_hex(v)
    }

    fn floats(&mut self, key: &str) -> Result<Vec<f64>> {
        let tokens = self.kv(key)?;
        tokens.into_iter().map(|t| self.parse_hex(t)).collect()
    }

    fn parse_hex(&self, t: &str) -> Result<f64> {
        if t.len() != 16 {
            return Err(self.err(format!("bad float `{}`", truncate(t))));
        }
        u64::from_str_radix(t, 16)
            .map(f64::from_bits)
            .map_err(|_| self.err(format!("bad float `{t}`")))
    }

    fn tensor(&mut self) -> Result<(String, Matrix)> {
        let header = self.kv("tensor")?;
        let [name, rows, cols] = header.as_slice() else {
            return Err(self.err("tensor header needs name, rows and cols"));
        };
        let (name, rows, cols) = (name.to_string(), *rows, *cols);
        let rows: usize = rows.parse().map_err(|_| self.err("bad tensor rows"))?;
        let cols: usize = cols.parse().map_err(|_| self.err("bad tensor cols"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.line()?;
            let before = data.len();
            for t in line.split(' ') {
                data.push(self.parse_hex(t)?);
            }
            if data.len() - before != cols {
                return Err(self.err(format!("tensor `{name}` row has {} values, expected {cols}", data.len() - before)));
            }
        }
        Ok((name, Matrix::from_vec(rows, cols, data)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.section.lines.len() {
            return Err(self.err("trailing lines"));
        }
        Ok(())
    }
}

fn mlp_section(name: String, mlp: &Mlp) -> Section {
    let spec = mlp.spec();
    let mut s = Section::new(name);
    s.kv("input_dim", spec.input_dim);
    s.floats("negative_slope", &[spec.negative_slope]);
    s.floats("dropout", &[spec.dropout]);
    s.floats("bn_epsilon", &[spec.bn_epsilon]);
    s.floats("bn_momentum", &[spec.bn_momentum]);
    s.kv("layers", spec.layers.len());
    for l in &spec.layers {
        let skip = l.skip_from.map_or("-".to_string(), |k| k.to_string());
        s.push(format!("layer {} {} {skip}", l.kind.as_str(), l.width));
    }
    s.kv("tensors", mlp.params().len());
    for (name, m) in mlp.params().iter() {
        s.tensor(name, m);
    }
    for (i, bn) in mlp.batch_norm_states().iter().enumerate() {
        if let Some(bn) = bn {
            s.kv("batch_norm", i);
            s.floats("epsilon", &[bn.epsilon]);
            s.floats("momentum", &[bn.momentum]);
            s.floats("running_mean", &bn.running_mean);
            s.floats("running_var", &bn.running_var);
        }
    }
    s
}

fn read_mlp(section: &Section) -> Result<Mlp> {
    let mut r = section.reader();
    let input_dim = r.usize("input_dim")?;
    let negative_slope = r.float("negative_slope")?;
    let dropout = r.float("dropout")?;
    let bn_epsilon = r.float("bn_epsilon")?;
    let bn_momentum = r.float("bn_momentum")?;
    let n = r.usize("layers")?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let t = r.kv("layer")?;
        let [kind, width, skip] = t.as_slice() else {
            return Err(r.err("layer needs kind, width and skip"));
        };
        let kind = LayerKind::parse(kind).ok_or_else(|| r.err(format!("unknown layer kind `{kind}`")))?;
        let width = width.parse().map_err(|_| r.err("bad layer width"))?;
        let mut layer = LayerSpec::new(kind, width);
        if *skip != "-" {
            layer = layer.with_skip(skip.parse().map_err(|_| r.err("bad skip index"))?);
        }
        layers.push(layer);
    }
    let spec = MlpSpec {
        input_dim,
        layers,
        negative_slope,
        dropout,
        bn_epsilon,
        bn_momentum,
    };
    let count = r.usize("tensors")?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let (name, m) = r.tensor()?;
        params.insert(name, m)?;
    }
    let mut bn: Vec<Option<BatchNormState>> = vec![None; spec.layers.len()];
    while r.pos < section.lines.len() {
        let i = r.usize("batch_norm")?;
        let epsilon = r.float("epsilon")?;
        let momentum = r.float("momentum")?;
        let running_mean = r.floats("running_mean")?;
        let running_var = r.floats("running_var")?;
        let slot = bn.get_mut(i).ok_or_else(|| r.err(format!("batch-norm index {i} out of range")))?;
        *slot = Some(BatchNormState {
            running_mean,
            running_var,
            epsilon,
            momentum,
        });
    }
    r.finish()?;
    Mlp::from_parts(spec, params, bn).map_err(|e| Error::archive(&section.name, e.to_string()))
}

fn normalizer_line(s: &mut Section, key: &str, n: &Normalizer) {
    s.floats(key, &[n.mean, n.std]);
}

fn read_normalizer(r: &mut SectionReader<'_>, key: &str) -> Result<Normalizer> {
    match r.floats(key)?.as_slice() {
        &[mean, std] => Ok(Normalizer { mean, std }),
        _ => Err(r.err(format!("`{key}` takes mean and std"))),
    }
}

/// Both QRNN stages of every sensor.
pub fn qrnn_archive(bank: &QrnnBank, digest: &str) -> Archive {
    let mut a = Archive::new(KIND_QRNN, digest);
    let mut head = Section::new("qrnn");
    head.kv("sensors", bank.num_sensors());
    head.kv("window", bank.window());
    let levels = bank.sensors.first().map_or(&[][..], |s| s.stage1.levels.levels());
    head.floats("levels", levels);
    head.floats("ratio", &[bank.ratio.epsilon, bank.ratio.p_max]);
    a.sections.push(head);
    for (i, s) in bank.sensors.iter().enumerate() {
        let mut meta = Section::new(format!("sensor.{i}"));
        meta.kv("sensor_id", s.stage1.sensor_id);
        normalizer_line(&mut meta, "stage1_normalizer", &s.stage1.normalizer);
        normalizer_line(&mut meta, "stage2_normalizer", &s.stage2.normalizer);
        a.sections.push(meta);
        for (k, m) in s.stage1.models.iter().enumerate() {
            a.sections.push(mlp_section(format!("sensor.{i}.stage1.{k}"), m));
        }
        a.sections.push(mlp_section(format!("sensor.{i}.stage2.lower"), &s.stage2.lower));
        a.sections.push(mlp_section(format!("sensor.{i}.stage2.upper"), &s.stage2.upper));
    }
    a
}

pub fn qrnn_from_archive(a: &Archive) -> Result<QrnnBank> {
    a.expect_kind(KIND_QRNN)?;
    let head = a.section("qrnn")?;
    let mut r = head.reader();
    let sensors = r.usize("sensors")?;
    let window = r.usize("window")?;
    let levels = QuantileLevelSet::new(r.floats("levels")?).map_err(|e| r.err(e.to_string()))?;
    let ratio = match r.floats("ratio")?.as_slice() {
        &[epsilon, p_max] => RatioConfig { epsilon, p_max },
        _ => return Err(r.err("`ratio` takes epsilon and cap")),
    };
    r.finish()?;
    let mut bank = Vec::with_capacity(sensors);
    for i in 0..sensors {
        let meta = a.section(&format!("sensor.{i}"))?;
        let mut r = meta.reader();
        let sensor_id = r.usize("sensor_id")?;
        let n1 = read_normalizer(&mut r, "stage1_normalizer")?;
        let n2 = read_normalizer(&mut r, "stage2_normalizer")?;
        r.finish()?;
        let models = (0..levels.len())
            .map(|k| read_mlp(a.section(&format!("sensor.{i}.stage1.{k}"))?))
            .collect::<Result<Vec<_>>>()?;
        if let Some(m) = models.iter().find(|m| m.spec().input_dim != window) {
            return Err(Error::archive(
                format!("sensor.{i}.stage1"),
                format!("network input width {} differs from window {window}", m.spec().input_dim),
            ));
        }
        bank.push(SensorQrnn {
            stage1: Stage1Ensemble {
                sensor_id,
                levels: levels.clone(),
                window,
                normalizer: n1,
                models,
            },
            stage2: Stage2Refiner {
                sensor_id,
                normalizer: n2,
                lower: read_mlp(a.section(&format!("sensor.{i}.stage2.lower"))?)?,
                upper: read_mlp(a.section(&format!("sensor.{i}.stage2.upper"))?)?,
            },
        });
    }
    Ok(QrnnBank { sensors: bank, ratio })
}

/// A trained transformer with the decision threshold it is used with.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedTransformer {
    pub variant: Variant,
    pub horizon: usize,
    pub threshold: f64,
    pub model: TransformerModel,
}

pub fn transformer_archive(saved: &SavedTransformer, digest: &str) -> Archive {
    let mut a = Archive::new(KIND_TRANSFORMER, digest);
    let c = saved.model.config();
    let mut model = Section::new("model");
    model.kv("variant", saved.variant.as_str());
    model.kv("horizon", saved.horizon);
    model.floats("threshold", &[saved.threshold]);
    model.kv("num_layers", c.num_layers);
    model.kv("num_heads", c.num_heads);
    model.kv("model_dim", c.model_dim);
    model.kv("ffn_dim", c.ffn_dim);
    model.floats("dropout", &[c.dropout]);
    model.kv("sequence_length", c.sequence_length);
    model.kv("input_dim", c.input_dim);
    a.sections.push(model);
    let mut std = Section::new("standardization");
    std.floats("shift", saved.model.input_shift());
    std.floats("scale", saved.model.input_scale());
    a.sections.push(std);
    let mut params = Section::new("params");
    params.kv("tensors", saved.model.params().len());
    for (name, m) in saved.model.params().iter() {
        params.tensor(name, m);
    }
    a.sections.push(params);
    a
}

pub fn transformer_from_archive(a: &Archive) -> Result<SavedTransformer> {
    a.expect_kind(KIND_TRANSFORMER)?;
    let mut r = a.section("model")?.reader();
    let variant: Variant = r.one("variant")?.parse().map_err(|e: Error| r.err(e.to_string()))?;
    let horizon = r.usize("horizon")?;
    let threshold = r.float("threshold")?;
    let config = TransformerConfig {
        num_layers: r.usize("num_layers")?,
        num_heads: r.usize("num_heads")?,
        model_dim: r.usize("model_dim")?,
        ffn_dim: r.usize("ffn_dim")?,
        dropout: r.float("dropout")?,
        sequence_length: r.usize("sequence_length")?,
        input_dim: r.usize("input_dim")?,
    };
    r.finish()?;
    let mut r = a.section("standardization")?.reader();
    let shift = r.floats("shift")?;
    let scale = r.floats("scale")?;
    r.finish()?;
    let section = a.section("params")?;
    let mut r = section.reader();
    let count = r.usize("tensors")?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let (name, m) = r.tensor()?;
        params.insert(name, m)?;
    }
    r.finish()?;
    let model = TransformerModel::from_parts(config, params, shift, scale)
        .map_err(|e| Error::archive("params", e.to_string()))?;
    Ok(SavedTransformer {
        variant,
        horizon,
        threshold,
        model,
    })
}
