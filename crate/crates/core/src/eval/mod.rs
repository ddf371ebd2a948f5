//! Metrics, the four-way ablation over prediction horizons, the KNN baseline
//! and the streaming latency benchmark.

mod ablation;
mod detector;
mod knn;
mod latency;
mod metrics;
mod table;

pub use ablation::{
    evaluate_cell, run_ablation, run_seed, train_variant_transformer, transformer_seed,
    AblationConfig, BenchmarkConfig, CellResult, Dataset, SeedContext, Variant,
};
pub use detector::{calibrate_threshold, ThresholdDetector};
pub use knn::knn_baseline;
pub use latency::{bench_latency, LatencyReport, StageStats, MIN_CYCLES};
pub use metrics::{
    accuracy, confusion, f1, precision, recall, ConfusionMatrix, Metric, MetricSummary,
};
pub use table::{check_floor, check_ordering, AggregateRow, Check, MeanStd, ResultTable};
