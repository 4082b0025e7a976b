//! Comparison tables and report files: a machine-readable CSV that
//! round-trips losslessly, a markdown rendering in the
//! "mean±std (delta with direction arrow)" style, and a run manifest.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::heads::metrics::MetricKind;

use super::ExperimentError;

/// Aggregated metric for one arm of one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmStats {
    pub mean: f64,
    pub std: f64,
    /// Seeds that finished; fewer than requested marks a partial result.
    pub seeds_ok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub backbone: String,
    pub layers: usize,
    pub baseline: Option<ArmStats>,
    pub clfe: Option<ArmStats>,
}

impl TableRow {
    /// with-CLFE minus without-CLFE, when both arms ran.
    pub fn delta(&self) -> Option<f64> {
        Some(self.clfe?.mean - self.baseline?.mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub metric: MetricKind,
    pub seeds_requested: usize,
    pub rows: Vec<TableRow>,
}

/// "68.836±0.119" with the metric's reporting scale applied.
pub fn format_cell(mean: f64, std: f64, scale: f64) -> String {
    format!("{:.3}±{:.3}", mean * scale, std * scale)
}

/// "68.836±0.119 (4.956↑)": the CLFE cell with the signed change rendered as
/// a magnitude plus direction arrow.
pub fn format_change_cell(mean: f64, std: f64, delta: f64, scale: f64) -> String {
    let arrow = if delta < 0.0 { '↓' } else { '↑' };
    format!("{:.3}±{:.3} ({:.3}{arrow})", mean * scale, std * scale, delta.abs() * scale)
}

impl ComparisonTable {
    const CSV_HEADER: &'static str = "metric,backbone,layers,seeds_requested,baseline_mean,baseline_std,baseline_seeds,clfe_mean,clfe_std,clfe_seeds,delta";

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", Self::CSV_HEADER);
        for row in &self.rows {
            let arm = |a: &Option<ArmStats>| match a {
                Some(st) => format!("{},{},{}", st.mean, st.std, st.seeds_ok),
                None => ",,".to_string(),
            };
            let delta = row.delta().map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.metric.name(),
                row.backbone,
                row.layers,
                self.seeds_requested,
                arm(&row.baseline),
                arm(&row.clfe),
                delta
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<ComparisonTable, ExperimentError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad_csv(0, "empty file"))?;
        if header != Self::CSV_HEADER {
            return Err(bad_csv(1, "unexpected header"));
        }
        let mut metric = None;
        let mut seeds_requested = 0;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad_csv(lineno, "wrong field count"));
            }
            let kind: MetricKind =
                f[0].parse().map_err(|e: String| bad_csv(lineno, &e))?;
            metric.get_or_insert(kind);
            if metric != Some(kind) {
                return Err(bad_csv(lineno, "mixed metrics in one table"));
            }
            seeds_requested =
                f[3].parse().map_err(|_| bad_csv(lineno, "bad seeds_requested"))?;
            let parse_arm = |m: &str, s: &str, k: &str| -> Result<Option<ArmStats>, ExperimentError> {
                if m.is_empty() {
                    return Ok(None);
                }
                Ok(Some(ArmStats {
                    mean: m.parse().map_err(|_| bad_csv(lineno, "bad mean"))?,
                    std: s.parse().map_err(|_| bad_csv(lineno, "bad std"))?,
                    seeds_ok: k.parse().map_err(|_| bad_csv(lineno, "bad seed count"))?,
                }))
            };
            rows.push(TableRow {
                backbone: f[1].to_string(),
                layers: f[2].parse().map_err(|_| bad_csv(lineno, "bad layer count"))?,
                baseline: parse_arm(f[4], f[5], f[6])?,
                clfe: parse_arm(f[7], f[8], f[9])?,
            });
        }
        Ok(ComparisonTable {
            metric: metric.ok_or_else(|| bad_csv(0, "no rows"))?,
            seeds_requested,
            rows,
        })
    }

    pub fn to_markdown(&self) -> String {
        let scale = self.metric.display_scale();
        let mut s = String::new();
        let _ = writeln!(s, "| Backbone | L | w/o CLFE | + CLFE |");
        let _ = writeln!(s, "|---|---|---|---|");
        for row in &self.rows {
            let base = match &row.baseline {
                Some(st) => {
                    let mut cell = format_cell(st.mean, st.std, scale);
                    if st.seeds_ok < self.seeds_requested {
                        let _ = write!(cell, " [{}/{} seeds]", st.seeds_ok, self.seeds_requested);
                    }
                    cell
                }
                None => "-".to_string(),
            };
            let clfe = match (&row.clfe, row.delta()) {
                (Some(st), delta) => {
                    let mut cell = match delta {
                        Some(d) => format_change_cell(st.mean, st.std, d, scale),
                        None => format_cell(st.mean, st.std, scale),
                    };
                    if st.seeds_ok < self.seeds_requested {
                        let _ = write!(cell, " [{}/{} seeds]", st.seeds_ok, self.seeds_requested);
                    }
                    cell
                }
                (None, _) => "-".to_string(),
            };
            let _ = writeln!(s, "| {} | {} | {} | {} |", row.backbone, row.layers, base, clfe);
        }
        let _ = writeln!(s, "\nMetric: {} (higher is {}).", self.metric.name(), if self.metric.higher_is_better() { "better" } else { "worse; lower is better" });
        s
    }
}

fn bad_csv(line: usize, msg: &str) -> ExperimentError {
    ExperimentError::Report { line, msg: msg.to_string() }
}

/// What went into a run: tool version, seeds, and the resolved configs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seeds: Vec<u64>,
    pub configs: Vec<String>,
}

impl Manifest {
    pub fn new(seeds: &[u64], configs: Vec<String>) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: seeds.to_vec(),
            configs,
        }
    }
}

/// Writes results.csv, results.md, and manifest.json under `dir`.
pub fn emit_report(
    tables: &[ComparisonTable],
    dir: &Path,
    manifest: &Manifest,
) -> Result<(), ExperimentError> {
    if tables.is_empty() {
        return Err(ExperimentError::EmptyReport);
    }
    std::fs::create_dir_all(dir)?;
    let mut csv = String::new();
    let mut md = String::new();
    for (i, table) in tables.iter().enumerate() {
        if i == 0 {
            csv.push_str(&table.to_csv());
        } else {
            // later tables append without repeating the header
            let body = table.to_csv();
            csv.push_str(body.split_once('\n').map(|(_, rest)| rest).unwrap_or(""));
        }
        md.push_str(&table.to_markdown());
        md.push('\n');
    }
    std::fs::write(dir.join("results.csv"), csv)?;
    std::fs::write(dir.join("results.md"), md)?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| ExperimentError::Report { line: 0, msg: e.to_string() })?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}
