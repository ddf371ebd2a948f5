use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ablation::{CellResult, Variant};
use crate::error::{Error, Result};

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub horizon: usize,
    pub seeds: usize,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

/// Per-cell results plus one aggregated row per (variant, horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub cells: Vec<CellResult>,
    pub rows: Vec<AggregateRow>,
}

impl ResultTable {
    /// Rows are ordered by horizon, then by variant.
    pub fn from_cells(cells: Vec<CellResult>) -> Self {
        let mut keys: Vec<(usize, Variant)> = cells.iter().map(|c| (c.horizon, c.variant)).collect();
        keys.sort();
        keys.dedup();
        let rows = keys
            .into_iter()
            .map(|(horizon, variant)| {
                let group: Vec<&CellResult> = cells
                    .iter()
                    .filter(|c| c.horizon == horizon && c.variant == variant)
                    .collect();
                let pick = |f: fn(&CellResult) -> f64| MeanStd::of(&group.iter().map(|c| f(c)).collect::<Vec<_>>());
                AggregateRow {
                    variant,
                    horizon,
                    seeds: group.len(),
                    accuracy: pick(|c| c.metrics.accuracy.value),
                    precision: pick(|c| c.metrics.precision.value),
                    recall: pick(|c| c.metrics.recall.value),
                    f1: pick(|c| c.metrics.f1.value),
                }
            })
            .collect();
        Self { cells, rows }
    }

    pub fn row(&self, variant: Variant, horizon: usize) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.variant == variant && r.horizon == horizon)
    }

    pub fn longest_horizon(&self) -> Option<usize> {
        self.rows.iter().map(|r| r.horizon).max()
    }

    /// Fixed-width text with one line per aggregated row.
    pub fn to_text(&self) -> String {
        let fmt = |m: &MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
        let mut out = format!(
            "{:<12} {:>8} {:>6} {:>17} {:>17} {:>17} {:>17}\n",
            "variant", "horizon", "seeds", "accuracy", "precision", "recall", "f1"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>8} {:>6} {:>17} {:>17} {:>17} {:>17}\n",
                r.variant.as_str(),
                r.horizon,
                r.seeds,
                fmt(&r.accuracy),
                fmt(&r.precision),
                fmt(&r.recall),
                fmt(&r.f1)
            ));
        }
        out
    }

    /// One JSON object per line: every cell tagged `"cell"`, then every
    /// aggregated row tagged `"row"`.
    pub fn write_json_lines<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Tagged<'a, T: Serialize> {
            kind: &'a str,
            #[serde(flatten)]
            value: &'a T,
        }
        let mut emit = |line: serde_json::Result<String>| -> Result<()> {
            let line = line.map_err(|e| Error::invalid(e.to_string()))?;
            writeln!(w, "{line}")?;
            Ok(())
        };
        for c in &self.cells {
            emit(serde_json::to_string(&Tagged { kind: "cell", value: c }))?;
        }
        for r in &self.rows {
            emit(serde_json::to_string(&Tagged { kind: "row", value: r }))?;
        }
        Ok(())
    }
}

/// Outcome of one check against a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Ordering at the longest horizon: each variant in `All ≥ Transformer ≥
/// QR2 ≥ QR` may trail the next weaker one by at most `slack` in mean
/// accuracy. Variants missing from the table are skipped.
pub fn check_ordering(table: &ResultTable, slack: f64) -> Option<Check> {
    let h = table.longest_horizon()?;
    let chain: Vec<&AggregateRow> = [Variant::All, Variant::TransformerOnly, Variant::Qr2, Variant::Qr]
        .iter()
        .filter_map(|&v| table.row(v, h))
        .collect();
    let mut passed = true;
    let mut parts = Vec::new();
    for w in chain.windows(2) {
        let gap = w[0].accuracy.mean - w[1].accuracy.mean;
        passed &= gap >= -slack;
        parts.push(format!("{}-{} {:+.4}", w[0].variant, w[1].variant, gap));
    }
    Some(Check {
        name: format!("ordering at horizon {h}"),
        passed,
        detail: parts.join(", "),
    })
}

/// Every variant's mean accuracy at `horizon` is at least `floor`.
pub fn check_floor(table: &ResultTable, horizon: usize, floor: f64) -> Option<Check> {
    let rows: Vec<&AggregateRow> = table.rows.iter().filter(|r| r.horizon == horizon).collect();
    if rows.is_empty() {
        return None;
    }
    Some(Check {
        name: format!("accuracy floor {floor} at horizon {horizon}"),
        passed: rows.iter().all(|r| r.accuracy.mean >= floor),
        detail: rows
            .iter()
            .map(|r| format!("{} {:.4}", r.variant, r.accuracy.mean))
            .collect::<Vec<_>>()
            .join(", "),
    })
}
