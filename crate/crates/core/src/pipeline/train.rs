use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::{gbt_fit, GbtConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geograph::SpatialGraph;
use crate::model::{Model, ModelSpec, NeuralRegressor, NodeRegressor};
use crate::nn::{adam_step, AdamConfig, AdamState, Dropout, ParamSet};
use crate::sage::rollout_step_rng;
use crate::seeded_rng;

/// Share of training frames, taken from the end, used for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    /// Drives initialization, frame shuffling, neighbourhood sampling and
    /// dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default_for(crate::model::ModelKind::Sage),
            epochs: 50,
            lr: 1e-3,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn new(model: ModelSpec, seed: u64) -> Self {
        Self {
            model,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        check_lr(self.lr)
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    Ok(())
}

/// Settings of one gradient-descent run, shared by training from scratch and
/// fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    /// Parameter-name prefixes whose gradients are zeroed.
    pub frozen: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Sample-weighted mean teacher-forced MSE over the epoch's batches,
    /// dropout active.
    pub train_mse: f64,
    /// Eval-mode teacher-forced MSE on the validation tail.
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochLoss>,
    /// Epoch whose parameters were kept (1-based); 0 means the initial ones.
    pub best_epoch: usize,
}

/// All present nodes of one frame with their teacher-forced targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub frame: usize,
    pub nodes: Vec<usize>,
    pub targets: Vec<f64>,
}

/// One batch per frame after the first that has at least one reading.
pub fn frame_batches(ds: &Dataset) -> Vec<FrameBatch> {
    ds.frames
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(t, f)| {
            let nodes: Vec<usize> = (0..ds.n_sensors()).filter(|&s| f.present[s]).collect();
            (!nodes.is_empty()).then(|| FrameBatch {
                frame: t,
                targets: nodes.iter().map(|&s| f.target_no2[s]).collect(),
                nodes,
            })
        })
        .collect()
}

/// Splits batches into a chronological training head and validation tail.
pub fn chronological_split(batches: &[FrameBatch]) -> (&[FrameBatch], &[FrameBatch]) {
    let n_val = (batches.len() as f64 * VALIDATION_FRACTION).floor() as usize;
    if n_val == 0 || n_val == batches.len() {
        return (batches, &[]);
    }
    batches.split_at(batches.len() - n_val)
}

/// Eval-mode teacher-forced MSE over the given batches.
pub fn teacher_forced_mse<M: NodeRegressor + ?Sized>(
    model: &M,
    ds: &Dataset,
    g: &SpatialGraph,
    batches: &[FrameBatch],
    seed: u64,
) -> Result<f64> {
    let mut ss = 0.0;
    let mut n = 0usize;
    for b in batches {
        let feats = &ds.frames[b.frame].features;
        let mut rng = rollout_step_rng(seed, b.frame);
        for (&v, &y) in b.nodes.iter().zip(&b.targets) {
            let d = model.predict_node(g, feats, v, &mut rng)? - y;
            ss += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no supervised frames"));
    }
    Ok(ss / n as f64)
}

pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn frozen_mask<P: ParamSet>(params: &P, frozen: &[String]) -> Vec<bool> {
    params
        .named_tensors()
        .iter()
        .map(|(name, _)| frozen.iter().any(|p| name.starts_with(p.as_str())))
        .collect()
}

/// Mini-batch Adam over per-frame batches with early stopping on the
/// chronological validation tail. Returns the best model seen.
pub fn fit_neural<M: NeuralRegressor>(
    mut model: M,
    ds: &Dataset,
    g: &SpatialGraph,
    settings: &LoopSettings,
) -> Result<(M, Vec<EpochLoss>, usize)> {
    check_lr(settings.lr)?;
    if settings.epochs == 0 {
        return Ok((model, Vec::new(), 0));
    }
    let batches = frame_batches(ds);
    if batches.is_empty() {
        return Err(Error::Empty("no supervised frames"));
    }
    let (train, val) = chronological_split(&batches);
    let mask = frozen_mask(model.params(), &settings.frozen);
    let mut adam = AdamState::new(model.params(), AdamConfig::with_lr(settings.lr));
    let mut order_rng = seeded_rng(derive_seed(settings.seed, 1));
    let mut sample_rng = seeded_rng(derive_seed(settings.seed, 2));
    let mut drop_rng = seeded_rng(derive_seed(settings.seed, 3));
    let val_seed = derive_seed(settings.seed, 4);

    let mut best = (!val.is_empty())
        .then(|| teacher_forced_mse(&model, ds, g, val, val_seed))
        .transpose()?
        .map(|v| (v, model.clone(), 0));
    let mut history = Vec::with_capacity(settings.epochs);
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut order_rng);
        let (mut total, mut count) = (0.0, 0usize);
        for &i in &order {
            let b = &train[i];
            let feats = &ds.frames[b.frame].features;
            let mut drop = Dropout::Train(&mut drop_rng);
            let (loss, mut grads) = model.batch_loss_grad(g, feats, &b.nodes, &b.targets, &mut sample_rng, &mut drop)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, value: loss });
            }
            for (t, &frozen) in grads.tensors_mut().into_iter().zip(&mask) {
                if frozen {
                    t.fill(0.0);
                }
            }
            adam_step(model.params_mut(), &grads, &mut adam)?;
            total += loss * b.nodes.len() as f64;
            count += b.nodes.len();
        }
        let train_mse = total / count as f64;
        let val_mse = (!val.is_empty())
            .then(|| teacher_forced_mse(&model, ds, g, val, val_seed))
            .transpose()?;
        debug!("epoch {epoch}: train {train_mse:.4} val {val_mse:?}");
        history.push(EpochLoss {
            epoch,
            train_mse,
            val_mse,
        });
        if let (Some(v), Some((best_v, best_m, best_e))) = (val_mse, best.as_mut()) {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, value: v });
            }
            if v < *best_v {
                *best_v = v;
                *best_m = model.clone();
                *best_e = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= settings.patience {
                    info!("early stop at epoch {epoch}, best epoch {best_e}");
                    break;
                }
            }
        }
    }
    Ok(match best {
        Some((_, m, e)) => (m, history, e),
        None => {
            let last = history.len();
            (model, history, last)
        }
    })
}

/// Training rows of a boosted-tree fit: every present node of every frame
/// after the first.
fn gbt_rows(ds: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for b in frame_batches(ds) {
        let f = &ds.frames[b.frame];
        for (&v, &t) in b.nodes.iter().zip(&b.targets) {
            x.push(f.features.row(v).to_vec());
            y.push(t);
        }
    }
    (x, y)
}

fn fit_gbt(ds: &Dataset, cfg: &GbtConfig) -> Result<TrainOutcome> {
    let (x, y) = gbt_rows(ds);
    let fit = gbt_fit(&x, &y, cfg)?;
    let history = fit
        .train_mse
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &m)| EpochLoss {
            epoch: i,
            train_mse: m,
            val_mse: None,
        })
        .collect();
    Ok(TrainOutcome {
        best_epoch: cfg.n_trees,
        model: Model::Gbt(fit.model),
        history,
    })
}

/// Trains the configured architecture from scratch on a standardized dataset
/// with its autoregressive column filled.
pub fn train(ds: &Dataset, g: &SpatialGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.stats.is_none() {
        return Err(Error::InvalidArgument("training expects a standardized dataset".into()));
    }
    if g.n_nodes() != ds.n_sensors() {
        return Err(Error::Shape(format!(
            "graph has {} nodes, dataset {} sensors",
            g.n_nodes(),
            ds.n_sensors()
        )));
    }
    if let ModelSpec::Gbt(c) = &cfg.model {
        return fit_gbt(ds, c);
    }
    let initial = cfg.model.with_seed(cfg.seed).init(ds.n_features())?;
    let settings = LoopSettings {
        epochs: cfg.epochs,
        lr: cfg.lr,
        patience: cfg.patience,
        seed: cfg.seed,
        frozen: Vec::new(),
    };
    continue_training(initial, ds, g, &settings)
}

/// Runs a fresh optimizer over an existing neural model.
pub fn continue_training(model: Model, ds: &Dataset, g: &SpatialGraph, settings: &LoopSettings) -> Result<TrainOutcome> {
    if model.n_features() != ds.n_features() {
        return Err(Error::SchemaMismatch(format!(
            "model expects {} features, dataset has {}",
            model.n_features(),
            ds.n_features()
        )));
    }
    let (model, history, best_epoch) = match model {
        Model::Sage(m) => wrap(fit_neural(m, ds, g, settings)?, Model::Sage),
        Model::Mlp(m) => wrap(fit_neural(m, ds, g, settings)?, Model::Mlp),
        Model::Cnn(m) => wrap(fit_neural(m, ds, g, settings)?, Model::Cnn),
        Model::Gbt(_) => return Err(Error::InvalidArgument("boosted trees cannot be fine-tuned".into())),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

fn wrap<M>(r: (M, Vec<EpochLoss>, usize), f: impl FnOnce(M) -> Model) -> (Model, Vec<EpochLoss>, usize) {
    (f(r.0), r.1, r.2)
}
