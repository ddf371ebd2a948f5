use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use serde_json::{json, Value};
use tqrnn_core::archive::{
    qrnn_archive, qrnn_from_archive, transformer_archive, transformer_from_archive, Archive, SavedTransformer,
};
use tqrnn_core::config::RunConfig;
use tqrnn_core::eval::{
    bench_latency, check_floor, check_ordering, evaluate_cell, train_variant_transformer, BenchmarkConfig,
    CellResult, ResultTable, SeedContext, Variant,
};
use tqrnn_core::nn::Matrix;
use tqrnn_core::pipeline::{Pipeline, QrnnBank};
use tqrnn_core::plantsim::{generate_plant, read_trace, split_trace, write_trace, PlantConfig, SensorTrace};
use tqrnn_core::transformer::DEFAULT_THRESHOLD;
use tqrnn_core::{Error, Result};

use crate::{Cli, Command};

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Seed whose models (and, without `--trace`, whose trace) are used.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "All")]
    variant: Variant,
    /// Defaults to the longest configured horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Trace file to score instead of the seed's generated trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Prediction records; defaults to a file in the results directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Exit with status 3 unless the ablation ordering holds at the longest
    /// horizon and every variant reaches the accuracy floor at the shortest.
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 0.01)]
    slack: f64,
    #[arg(long, default_value_t = 0.95)]
    floor: f64,
}

struct Session {
    cfg: RunConfig,
    quiet: bool,
    warnings: Vec<String>,
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let mut s = Session {
        cfg,
        quiet: cli.quiet,
        warnings: Vec::new(),
    };
    match &cli.command {
        Command::Generate => s.generate(),
        Command::TrainQrnn => s.train_qrnn(),
        Command::TrainTransformer => s.train_transformer(),
        Command::Predict(args) => s.predict(args),
        Command::Evaluate(args) => s.evaluate(args),
        Command::Bench => s.bench(),
        Command::ShowConfig => {
            print!("{}", s.cfg.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn variant_slug(v: Variant) -> String {
    v.as_str().to_ascii_lowercase()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json_lines<T: serde::Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let line = serde_json::to_string(&r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn refs(seqs: &[tqrnn_core::feature::FeatureSequence]) -> Vec<&Matrix> {
    seqs.iter().map(|s| &s.values).collect()
}

impl Session {
    fn log(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    fn bench_cfg(&self) -> BenchmarkConfig {
        self.cfg.benchmark()
    }

    fn trace_path(&self, seed: u64) -> PathBuf {
        self.cfg.paths.data_dir.join(format!("trace-seed{seed}.txt"))
    }

    fn qrnn_path(&self, seed: u64) -> PathBuf {
        self.cfg.paths.models_dir.join(format!("qrnn-seed{seed}.tqa"))
    }

    fn transformer_path(&self, seed: u64, v: Variant, h: usize) -> PathBuf {
        self.cfg
            .paths
            .models_dir
            .join(format!("transformer-{}-h{h}-seed{seed}.tqa", variant_slug(v)))
    }

    fn results(&self, name: &str) -> PathBuf {
        self.cfg.paths.results_dir.join(name)
    }

    /// Writes `<command>-summary.json` and echoes it on stdout.
    fn summary(&self, command: &str, mut body: Value) -> Result<ExitCode> {
        create_dir(&self.cfg.paths.results_dir)?;
        body["command"] = json!(command);
        body["config_digest"] = json!(self.cfg.digest());
        body["warnings"] = json!(self.warnings);
        let text = serde_json::to_string_pretty(&body).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        fs::write(self.results(&format!("{command}-summary.json")), format!("{text}\n"))?;
        println!("{}", serde_json::to_string(&body).map_err(|e| Error::InvalidArgument(e.to_string()))?);
        Ok(ExitCode::SUCCESS)
    }

    fn load_trace(&self, path: &Path) -> Result<SensorTrace> {
        let file = File::open(path).map_err(|e| {
            Error::MissingComponent(format!("trace {} ({e}); run `tqrnn generate` first", path.display()))
        })?;
        read_trace(BufReader::new(file))
    }

    fn load_archive(&mut self, path: &Path) -> Result<Archive> {
        let a = Archive::load(path)?;
        if let Some(w) = a.digest_warning(&self.cfg.digest()) {
            self.warn(format!("{}: {w}", path.display()));
        }
        Ok(a)
    }

    fn load_qrnn(&mut self, seed: u64) -> Result<QrnnBank> {
        let path = self.qrnn_path(seed);
        if !path.exists() {
            return Err(Error::MissingComponent(format!(
                "quantile networks {} ; run `tqrnn train-qrnn` first",
                path.display()
            )));
        }
        let a = self.load_archive(&path)?;
        qrnn_from_archive(&a)
    }

    fn load_transformer(&mut self, seed: u64, v: Variant, h: usize) -> Result<SavedTransformer> {
        let path = self.transformer_path(seed, v, h);
        if !path.exists() {
            return Err(Error::MissingComponent(format!(
                "transformer {} ; run `tqrnn train-transformer` first",
                path.display()
            )));
        }
        let a = self.load_archive(&path)?;
        transformer_from_archive(&a)
    }

    /// Trace, split and (when needed) QRNN feature streams of one seed.
    fn context(&mut self, seed: u64, trace: SensorTrace, with_qrnn: bool) -> Result<SeedContext> {
        let b = self.bench_cfg();
        let split = split_trace(&trace, (b.split[0], b.split[1], b.split[2]))?;
        let mut ctx = SeedContext::new(trace, split, b.qrnn.stage1.window, seed);
        if with_qrnn {
            let bank = self.load_qrnn(seed)?;
            if bank.num_sensors() != ctx.trace.num_channels() {
                return Err(Error::Shape(format!(
                    "quantile networks cover {} sensors, trace has {}",
                    bank.num_sensors(),
                    ctx.trace.num_channels()
                )));
            }
            ctx.window = bank.window();
            ctx.streams = Some(bank.features(&ctx.trace.channels)?);
        }
        Ok(ctx)
    }

    fn generate(&mut self) -> Result<ExitCode> {
        create_dir(&self.cfg.paths.data_dir)?;
        let mut traces = Vec::new();
        for &seed in &self.cfg.seeds.clone() {
            let trace = generate_plant(&self.cfg.plant, seed)?;
            let path = self.trace_path(seed);
            write_trace(&trace, BufWriter::new(File::create(&path)?))?;
            let abnormal = trace.abnormal_mask().iter().filter(|&&a| a).count();
            self.log(&format!("seed {seed}: wrote {}", path.display()));
            traces.push(json!({
                "seed": seed,
                "path": path,
                "channels": trace.num_channels(),
                "duration": trace.duration,
                "faults": trace.schedule.len(),
                "abnormal_fraction": abnormal as f64 / trace.duration as f64,
            }));
        }
        self.summary("generate", json!({ "traces": traces }))
    }

    fn train_qrnn(&mut self) -> Result<ExitCode> {
        create_dir(&self.cfg.paths.models_dir)?;
        create_dir(&self.cfg.paths.results_dir)?;
        let b = self.bench_cfg();
        let mut out = Vec::new();
        for &seed in &b.seeds {
            let trace = self.load_trace(&self.trace_path(seed))?;
            let split = split_trace(&trace, (b.split[0], b.split[1], b.split[2]))?;
            self.log(&format!("seed {seed}: training quantile networks for {} sensors", trace.num_channels()));
            let (bank, histories) = QrnnBank::train(&trace, &split, &b.qrnn, seed)?;
            let path = self.qrnn_path(seed);
            qrnn_archive(&bank, &self.cfg.digest()).save(&path)?;
            let mut records = Vec::new();
            for (sensor, h) in histories.iter().enumerate() {
                let nets = h
                    .stage1
                    .iter()
                    .map(|x| ("stage1", x))
                    .chain(h.stage2.iter().map(|x| ("stage2", x)));
                for (stage, hist) in nets {
                    for e in &hist.epochs {
                        records.push(json!({
                            "sensor": sensor,
                            "stage": stage,
                            "level": hist.level,
                            "epoch": e.epoch,
                            "train_loss": e.train_loss,
                        }));
                    }
                }
            }
            write_json_lines(&self.results(&format!("qrnn-history-seed{seed}.jsonl")), records)?;
            let final_losses: Vec<Option<f64>> = histories
                .iter()
                .flat_map(|h| h.stage1.iter().map(|x| x.final_loss()))
                .collect();
            out.push(json!({ "seed": seed, "path": path, "stage1_final_losses": final_losses }));
        }
        self.summary("train-qrnn", json!({ "models": out }))
    }

    fn train_transformer(&mut self) -> Result<ExitCode> {
        create_dir(&self.cfg.paths.models_dir)?;
        create_dir(&self.cfg.paths.results_dir)?;
        let b = self.bench_cfg();
        let variants: Vec<Variant> = b.variants.iter().copied().filter(|v| v.uses_transformer()).collect();
        let mut out = Vec::new();
        for &seed in &b.seeds {
            let trace = self.load_trace(&self.trace_path(seed))?;
            let ctx = self.context(seed, trace, variants.contains(&Variant::All))?;
            for &h in &b.horizons {
                for &v in &variants {
                    self.log(&format!("seed {seed}: training transformer for {v} at horizon {h}"));
                    let (model, history) = train_variant_transformer(&ctx, &b, v, h)?;
                    let path = self.transformer_path(seed, v, h);
                    let saved = SavedTransformer {
                        variant: v,
                        horizon: h,
                        threshold: DEFAULT_THRESHOLD,
                        model,
                    };
                    transformer_archive(&saved, &self.cfg.digest()).save(&path)?;
                    let name = format!("transformer-history-{}-h{h}-seed{seed}.jsonl", variant_slug(v));
                    write_json_lines(&self.results(&name), &history.epochs)?;
                    out.push(json!({
                        "seed": seed,
                        "variant": v,
                        "horizon": h,
                        "path": path,
                        "best_epoch": history.best_epoch,
                        "final_train_loss": history.final_train_loss(),
                    }));
                }
            }
        }
        self.summary("train-transformer", json!({ "models": out }))
    }

    fn predict(&mut self, args: &PredictArgs) -> Result<ExitCode> {
        let b = self.bench_cfg();
        let seed = args.seed.unwrap_or(b.seeds[0]);
        let horizon = args
            .horizon
            .unwrap_or_else(|| b.horizons.iter().copied().max().expect("validated"));
        if !args.variant.uses_transformer() {
            return Err(Error::InvalidArgument(format!(
                "predict needs a transformer variant, got {}",
                args.variant
            )));
        }
        let trace_path = args.trace.clone().unwrap_or_else(|| self.trace_path(seed));
        let trace = self.load_trace(&trace_path)?;
        let saved = self.load_transformer(seed, args.variant, horizon)?;
        let ctx = self.context(seed, trace, args.variant.uses_qrnn())?;
        let seqs = ctx.all_sequences(args.variant, &b, horizon)?;
        let probs = saved.model.predict_batch(&refs(&seqs))?;
        let output = args.output.clone().unwrap_or_else(|| {
            self.results(&format!(
                "predictions-{}-h{horizon}-seed{seed}.jsonl",
                variant_slug(args.variant)
            ))
        });
        if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        let records = seqs.iter().zip(&probs).map(|(s, &p)| {
            json!({
                "start_time": s.start_time,
                "end_time": s.end_time,
                "label": s.label,
                "probability": p,
                "decision": tqrnn_core::transformer::decide(p, saved.threshold),
            })
        });
        write_json_lines(&output, records)?;
        let positives = probs
            .iter()
            .filter(|&&p| tqrnn_core::transformer::decide(p, saved.threshold) == 1)
            .count();
        self.summary(
            "predict",
            json!({
                "seed": seed,
                "variant": args.variant,
                "horizon": horizon,
                "trace": trace_path,
                "output": output,
                "sequences": seqs.len(),
                "predicted_positive": positives,
                "threshold": saved.threshold,
            }),
        )
    }

    fn evaluate(&mut self, args: &EvaluateArgs) -> Result<ExitCode> {
        let b = self.bench_cfg();
        let mut cells: Vec<CellResult> = Vec::new();
        for &seed in &b.seeds {
            let trace = self.load_trace(&self.trace_path(seed))?;
            let mut ctx = self.context(seed, trace, b.variants.iter().any(|v| v.uses_qrnn()))?;
            for &h in &b.horizons {
                for &v in b.variants.iter().filter(|v| v.uses_transformer()) {
                    let saved = self.load_transformer(seed, v, h)?;
                    ctx.transformers.insert((v, h), saved.model);
                }
            }
            self.log(&format!("seed {seed}: scoring {} cells", b.horizons.len() * b.variants.len()));
            for &h in &b.horizons {
                for &v in &b.variants {
                    cells.push(evaluate_cell(&ctx, &b, v, h)?);
                }
            }
        }
        let table = ResultTable::from_cells(cells);
        create_dir(&self.cfg.paths.results_dir)?;
        let text = table.to_text();
        fs::write(self.results("ablation.txt"), &text)?;
        table.write_json_lines(BufWriter::new(File::create(self.results("ablation.jsonl"))?))?;
        if !self.quiet {
            eprint!("{text}");
        }
        let shortest = b.horizons.iter().copied().min().expect("validated");
        let checks: Vec<_> = [check_ordering(&table, args.slack), check_floor(&table, shortest, args.floor)]
            .into_iter()
            .flatten()
            .collect();
        let failed = args.check && checks.iter().any(|c| !c.passed);
        if args.check {
            for c in &checks {
                eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
        }
        self.summary("evaluate", json!({ "rows": table.rows, "checks": checks }))?;
        Ok(if failed { ExitCode::from(3) } else { ExitCode::SUCCESS })
    }

    fn bench(&mut self) -> Result<ExitCode> {
        let lat = self.cfg.latency.clone();
        let mut transformer = lat.transformer.clone();
        transformer.input_dim = lat.sensors;
        let pipeline = Pipeline::initialized(lat.sensors, &self.cfg.qrnn, &transformer, lat.seed)?;
        let needed = pipeline.qrnn.window() + transformer.sequence_length + lat.warmup + lat.cycles;
        let plant = PlantConfig {
            sensors: lat.sensors,
            duration: needed,
            ..self.cfg.plant.clone()
        };
        let trace = generate_plant(&plant, lat.seed)?;
        let samples: Vec<Vec<f64>> = (0..trace.duration).map(|t| trace.sample(t)).collect();
        self.log(&format!(
            "timing {} cycles at {} sensors after {} warm-up cycles",
            lat.cycles, lat.sensors, lat.warmup
        ));
        let report = bench_latency(&pipeline, &samples, lat.warmup, lat.cycles)?;
        create_dir(&self.cfg.paths.results_dir)?;
        fs::write(self.results("latency.txt"), report.to_text())?;
        if !self.quiet {
            eprint!("{}", report.to_text());
        }
        self.summary("bench", json!({ "latency": report, "budget_ms": 2000.0 }))
    }
}
