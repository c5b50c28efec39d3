use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::improvement;
use crate::error::{Error, Result};
use crate::model::ModelKind;

/// Hex digest of the canonical JSON form of a config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(config)?)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub rmse: f64,
    pub nrmse: f64,
    pub grad_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationMetrics {
    pub sensor_id: String,
    /// Frames that entered the metrics.
    pub n_frames: usize,
    pub mean_actual: f64,
    pub rmse: f64,
    pub nrmse: f64,
    pub grad_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model: ModelKind,
    /// Row label, e.g. `GraphSAGE` or `Transferred CNN`.
    pub label: String,
    pub transferred: bool,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    /// Held-out locations in dataset order.
    pub locations: Vec<LocationMetrics>,
    /// Locations without enough readings to score.
    pub skipped: Vec<String>,
    pub average: MetricSummary,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn average_metrics(locations: &[LocationMetrics]) -> Result<MetricSummary> {
    if locations.is_empty() {
        return Err(Error::Empty("no scored locations"));
    }
    Ok(MetricSummary {
        rmse: mean(locations.iter().map(|l| l.rmse)),
        nrmse: mean(locations.iter().map(|l| l.nrmse)),
        grad_rmse: mean(locations.iter().map(|l| l.grad_rmse)),
    })
}

pub const CSV_HEADER: &str = "model,rmse,nrmse,grad_rmse";

fn csv_line(label: &str, m: &MetricSummary) -> String {
    format!("{label},{:.3},{:.3},{:.3}\n", m.rmse, m.nrmse, m.grad_rmse)
}

impl EvalReport {
    pub fn new(metadata: ReportMetadata, locations: Vec<LocationMetrics>, skipped: Vec<String>) -> Result<Self> {
        let average = average_metrics(&locations)?;
        Ok(Self {
            metadata,
            locations,
            skipped,
            average,
        })
    }

    /// Largest absolute gap between stored and recomputed averages.
    pub fn average_drift(&self) -> Result<f64> {
        let m = average_metrics(&self.locations)?;
        Ok((m.rmse - self.average.rmse)
            .abs()
            .max((m.nrmse - self.average.nrmse).abs())
            .max((m.grad_rmse - self.average.grad_rmse).abs()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.average_drift()? > 1e-12 {
            return Err(Error::InvalidArgument(
                "report averages do not match its per-location entries".into(),
            ));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Averages as a `model,rmse,nrmse,grad_rmse` table.
    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", csv_line(&self.metadata.label, &self.average))
    }

    /// Per-location rows followed by the average.
    pub fn locations_csv(&self) -> String {
        let mut s = String::from("sensor_id,n_frames,mean_actual,rmse,nrmse,grad_rmse\n");
        for l in &self.locations {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                l.sensor_id, l.n_frames, l.mean_actual, l.rmse, l.nrmse, l.grad_rmse
            );
        }
        s
    }
}

/// Several reports as one table, one row per model.
pub fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in reports {
        s.push_str(&csv_line(&r.metadata.label, &r.average));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementTable {
    pub base_label: String,
    pub new_label: String,
    pub base: MetricSummary,
    pub new: MetricSummary,
    /// Percentage reduction per metric.
    pub improvement: MetricSummary,
}

impl ImprovementTable {
    pub fn from_summaries(base_label: &str, base: MetricSummary, new_label: &str, new: MetricSummary) -> Result<Self> {
        Ok(Self {
            base_label: base_label.to_string(),
            new_label: new_label.to_string(),
            base,
            new,
            improvement: MetricSummary {
                rmse: improvement(base.rmse, new.rmse)?,
                nrmse: improvement(base.nrmse, new.nrmse)?,
                grad_rmse: improvement(base.grad_rmse, new.grad_rmse)?,
            },
        })
    }

    pub fn compare(base: &EvalReport, new: &EvalReport) -> Result<Self> {
        Self::from_summaries(&base.metadata.label, base.average, &new.metadata.label, new.average)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{CSV_HEADER}\n{}{}{}",
            csv_line(&self.base_label, &self.base),
            csv_line(&self.new_label, &self.new),
            csv_line("Percentage Improvement", &self.improvement)
        )
    }
}
