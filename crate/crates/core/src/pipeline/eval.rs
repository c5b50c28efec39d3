use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{grad_rmse, nrmse, rmse};
use super::report::{config_hash, EvalReport, LocationMetrics, ReportMetadata};
use super::train::{derive_seed, train, TrainConfig};
use super::transfer::{fine_tune, FineTuneConfig};
use crate::dataset::{fill_prev_no2, standardize, Dataset, ReadPurpose, StandardizationStats, TargetSource};
use crate::error::{Error, Result};
use crate::geograph::SpatialGraph;
use crate::model::{Model, ModelKind};
use crate::sage::{rollout, InitScheme};

/// How each fold obtains its model.
#[derive(Debug, Clone, PartialEq)]
pub enum FoldStrategy {
    Scratch(TrainConfig),
    FineTune {
        pretrained: Model,
        config: FineTuneConfig,
        /// Standardize folds with these statistics instead of fitting their
        /// own.
        stats: Option<StandardizationStats>,
    },
}

impl FoldStrategy {
    pub fn kind(&self) -> ModelKind {
        match self {
            FoldStrategy::Scratch(c) => c.model.kind(),
            FoldStrategy::FineTune { pretrained, .. } => pretrained.kind(),
        }
    }

    pub fn label(&self) -> String {
        let name = display_name(self.kind());
        match self {
            FoldStrategy::Scratch(_) => name.to_string(),
            FoldStrategy::FineTune { .. } => format!("Transferred {name}"),
        }
    }

    fn base_seed(&self) -> u64 {
        match self {
            FoldStrategy::Scratch(c) => c.seed,
            FoldStrategy::FineTune { config, .. } => config.seed,
        }
    }

    fn config_json(&self) -> Result<serde_json::Value> {
        Ok(match self {
            FoldStrategy::Scratch(c) => serde_json::to_value(c)?,
            FoldStrategy::FineTune { pretrained, config, stats } => serde_json::json!({
                "model": pretrained.spec(),
                "finetune": config,
                "source_stats": stats.is_some(),
            }),
        })
    }
}

pub fn display_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Sage => "GraphSAGE",
        ModelKind::Mlp => "MLP",
        ModelKind::Cnn => "CNN",
        ModelKind::Gbt => "GBT",
    }
}

/// Predicted and actual NO₂ of one held-out location on its scored frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSeries {
    pub sensor_id: String,
    pub frames: Vec<usize>,
    /// Clipped at 0.
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooOutcome {
    pub report: EvalReport,
    pub series: Vec<FoldSeries>,
}

/// Standardized training view of a fold: targets read through `truth` for
/// every sensor except `held_out`, which keeps its features only.
pub fn fold_dataset<S: TargetSource + ?Sized>(
    features: &Dataset,
    truth: &S,
    held_out: usize,
    stats: Option<&StandardizationStats>,
) -> Result<Dataset> {
    if features.stats.is_some() {
        return Err(Error::AlreadyStandardized);
    }
    let mut ds = features.clone();
    for (t, f) in ds.frames.iter_mut().enumerate() {
        for s in 0..f.present.len() {
            let y = if s == held_out {
                None
            } else {
                truth.target(t, s, ReadPurpose::Training)
            };
            f.present[s] = y.is_some();
            f.target_no2[s] = y.unwrap_or(0.0);
        }
    }
    let ds = fill_prev_no2(&ds);
    match stats {
        Some(st) => st.apply(&ds),
        None => Ok(standardize(&ds)?.0),
    }
}

/// Trains on a fold dataset, rolls out on the held-out node and scores the
/// frames where it has readings.
fn run_fold<S: TargetSource + ?Sized>(
    features: &Dataset,
    truth: &S,
    g: &SpatialGraph,
    strategy: &FoldStrategy,
    held_out: usize,
) -> Result<Option<(LocationMetrics, FoldSeries)>> {
    let id = features.locations[held_out].id.clone();
    let fold_seed = derive_seed(strategy.base_seed(), 1000 + held_out as u64);
    let (ds, model) = match strategy {
        FoldStrategy::Scratch(cfg) => {
            let ds = fold_dataset(features, truth, held_out, None)?;
            let cfg = TrainConfig {
                seed: fold_seed,
                ..cfg.clone()
            };
            let model = train(&ds, g, &cfg)?.model;
            (ds, model)
        }
        FoldStrategy::FineTune {
            pretrained,
            config,
            stats,
        } => {
            let ds = fold_dataset(features, truth, held_out, stats.as_ref())?;
            let cfg = FineTuneConfig {
                seed: fold_seed,
                ..config.clone()
            };
            (ds.clone(), fine_tune(pretrained, &ds, g, &cfg)?.0)
        }
    };
    let init = truth
        .target(0, held_out, ReadPurpose::RolloutInit)
        .unwrap_or_else(|| ds.mean_no2());
    let preds = rollout(&model, g, &ds, truth, held_out, InitScheme::FixedEstimate(init), fold_seed)?;
    let mut series = FoldSeries {
        sensor_id: id.clone(),
        frames: Vec::new(),
        predicted: Vec::new(),
        actual: Vec::new(),
    };
    for (i, &p) in preds.iter().enumerate() {
        let t = i + 1;
        if let Some(y) = truth.target(t, held_out, ReadPurpose::Metric) {
            series.frames.push(t);
            series.predicted.push(p.max(0.0));
            series.actual.push(y);
        }
    }
    if series.actual.len() < 2 {
        warn!("location {id}: {} scored frames, skipped", series.actual.len());
        return Ok(None);
    }
    let mean_actual = series.actual.iter().sum::<f64>() / series.actual.len() as f64;
    if mean_actual <= 0.0 {
        warn!("location {id}: non-positive mean NO2, skipped");
        return Ok(None);
    }
    let m = LocationMetrics {
        sensor_id: id,
        n_frames: series.actual.len(),
        mean_actual,
        rmse: rmse(&series.predicted, &series.actual)?,
        nrmse: nrmse(&series.predicted, &series.actual)?,
        grad_rmse: grad_rmse(&series.predicted, &series.actual)?,
    };
    info!("location {}: rmse {:.3} nrmse {:.3}", m.sensor_id, m.rmse, m.nrmse);
    Ok(Some((m, series)))
}

/// Fold parallelism: `VS_THREADS` if set, else one thread per fold.
pub fn fold_threads(n_folds: usize) -> usize {
    std::env::var("VS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(n_folds, |n| n.min(n_folds))
        .max(1)
}

/// Leave-one-location-out evaluation.
///
/// `features` is the raw (unstandardized) dataset that supplies inputs for
/// every node; ground truth is only ever read through `truth`. Each fold keeps
/// the held-out node in the graph as a feature provider, trains without its
/// targets, rolls out from its first reading and scores the frames where it
/// reports.
pub fn leave_one_out<S: TargetSource + ?Sized>(
    features: &Dataset,
    truth: &S,
    g: &SpatialGraph,
    strategy: &FoldStrategy,
) -> Result<LooOutcome> {
    let n = features.n_sensors();
    if n < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least 2 locations".into()));
    }
    if g.n_nodes() != n {
        return Err(Error::Shape(format!("graph has {} nodes, dataset {n} sensors", g.n_nodes())));
    }
    if let FoldStrategy::FineTune { pretrained, .. } = strategy {
        if pretrained.n_features() != features.n_features() {
            return Err(Error::SchemaMismatch(format!(
                "pretrained model expects {} features, dataset has {}",
                pretrained.n_features(),
                features.n_features()
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(fold_threads(n))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<Result<Option<(LocationMetrics, FoldSeries)>>> =
        pool.install(|| (0..n).into_par_iter().map(|s| run_fold(features, truth, g, strategy, s)).collect());
    let mut locations = Vec::new();
    let mut series = Vec::new();
    let mut skipped = Vec::new();
    for (s, r) in results.into_iter().enumerate() {
        match r? {
            Some((m, sr)) => {
                locations.push(m);
                series.push(sr);
            }
            None => skipped.push(features.locations[s].id.clone()),
        }
    }
    let metadata = ReportMetadata {
        model: strategy.kind(),
        label: strategy.label(),
        transferred: matches!(strategy, FoldStrategy::FineTune { .. }),
        seeds: vec![strategy.base_seed()],
        config_hash: config_hash(&strategy.config_json()?)?,
    };
    Ok(LooOutcome {
        report: EvalReport::new(metadata, locations, skipped)?,
        series,
    })
}

/// Predictions for one location from an already trained model. The
/// location's readings are hidden from the model inputs; only its first
/// reading seeds the rollout.
pub fn predict_location<S: TargetSource + ?Sized>(
    model: &Model,
    features: &Dataset,
    truth: &S,
    g: &SpatialGraph,
    stats: &StandardizationStats,
    sensor: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let ds = fold_dataset(features, truth, sensor, Some(stats))?;
    let init = truth
        .target(0, sensor, ReadPurpose::RolloutInit)
        .unwrap_or_else(|| ds.mean_no2());
    rollout(model, g, &ds, truth, sensor, InitScheme::FixedEstimate(init), seed)
}
