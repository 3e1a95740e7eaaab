use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::{MethodStats, RunRow};
use super::ClosedLoopRecord;
use crate::error::{Error, Result};

/// Per-run values plus statistics per `(method, noise_variance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub kind: String,
    /// What `value` holds.
    pub metric: String,
    /// What `secondary` holds, when present.
    pub secondary_metric: Option<String>,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub stats: Vec<MethodStats>,
    pub rows: Vec<RunRow>,
}

impl BenchmarkSummary {
    /// Statistics are computed from `rows`, grouped in first-appearance order.
    pub fn from_rows(
        kind: &str,
        metric: &str,
        secondary_metric: Option<&str>,
        fingerprint: String,
        seeds: Vec<u64>,
        rows: Vec<RunRow>,
    ) -> Self {
        let mut keys: Vec<(String, f64)> = Vec::new();
        for r in &rows {
            if !keys
                .iter()
                .any(|(m, v)| *m == r.method && v.to_bits() == r.noise_variance.to_bits())
            {
                keys.push((r.method.clone(), r.noise_variance));
            }
        }
        let stats = keys
            .into_iter()
            .map(|(method, nv)| {
                let group = rows
                    .iter()
                    .filter(|r| r.method == method && r.noise_variance.to_bits() == nv.to_bits());
                MethodStats::from_values(&method, nv, group.map(|r| r.value))
            })
            .collect();
        Self {
            kind: kind.into(),
            metric: metric.into(),
            secondary_metric: secondary_metric.map(Into::into),
            fingerprint,
            seeds,
            stats,
            rows,
        }
    }

    pub fn stat(&self, method: &str, noise_variance: f64) -> Option<&MethodStats> {
        self.stats
            .iter()
            .find(|s| s.method == method && s.noise_variance.to_bits() == noise_variance.to_bits())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Header plus one row per `(run, method)`.
    Csv,
    /// The whole summary.
    Json,
}

pub fn write_report(
    summary: &BenchmarkSummary,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Json => fs::write(path, summary.to_json()?).map_err(|e| Error::io(path, e)),
        ReportFormat::Csv => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = csv::Writer::from_writer(file);
            let csv_err = |e: csv::Error| Error::Serde(format!("{}: {e}", path.display()));
            w.write_record(["seed", "method", "noise_variance", "value", "secondary"])
                .map_err(csv_err)?;
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            for r in &summary.rows {
                w.write_record([
                    r.seed.to_string(),
                    r.method.clone(),
                    format!("{:e}", r.noise_variance),
                    opt(r.value),
                    opt(r.secondary),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

/// One row per step per controller: `method,step,u..,y_measured..,y_clean..,reference..`.
/// Wall times live in a separate file ([`write_timing_csv`]) so this one is
/// reproducible byte for byte.
pub fn write_closed_loop_csv(records: &[ClosedLoopRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Serde(format!("{}: {e}", path.display()));
    let Some(first) = records.first() else {
        return w.flush().map_err(|e| Error::io(path, e));
    };
    let (m, p) = (first.inputs.nrows(), first.clean.nrows());
    let mut header = vec!["method".to_string(), "step".to_string()];
    header.extend((0..m).map(|i| format!("u{i}")));
    header.extend((0..p).map(|i| format!("y_measured{i}")));
    header.extend((0..p).map(|i| format!("y_clean{i}")));
    header.extend((0..p).map(|i| format!("reference{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for rec in records {
        for t in 0..rec.steps() {
            let mut row = vec![rec.method.clone(), t.to_string()];
            row.extend(rec.inputs.column(t).iter().map(|v| format!("{v:e}")));
            row.extend(rec.measured.column(t).iter().map(|v| format!("{v:e}")));
            row.extend(rec.clean.column(t).iter().map(|v| format!("{v:e}")));
            row.extend(rec.reference.column(t).iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `method,step,solve_time_s,iterations`, one row per step per controller.
pub fn write_timing_csv(records: &[ClosedLoopRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Serde(format!("{}: {e}", path.display()));
    w.write_record(["method", "step", "solve_time_s", "iterations"])
        .map_err(csv_err)?;
    for rec in records {
        for t in 0..rec.steps() {
            w.write_record([
                rec.method.clone(),
                t.to_string(),
                format!("{:e}", rec.solve_time_s[t]),
                rec.iterations[t].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
