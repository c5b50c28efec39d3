//! Common interface of every regressor that can act as a virtual sensor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{CnnConfig, CnnModel, GbtConfig, GbtModel, MlpConfig, MlpModel, RegressionTree};
use crate::error::{Error, Result};
use crate::geograph::SpatialGraph;
use crate::nn::{Dropout, ParamSet};
use crate::sage::{SageConfig, SageModel};
use crate::tensor::Tensor2;
use crate::Rng;

/// Eval-mode prediction of NO₂ (µg/m³) for one node of one hourly frame.
///
/// `feats` holds one standardized feature row per graph node. Models without
/// a graph component only read `feats.row(node)`.
pub trait NodeRegressor {
    fn predict_node(&self, g: &SpatialGraph, feats: &Tensor2, node: usize, rng: &mut Rng) -> Result<f64>;
}

/// A regressor trained by gradient descent on per-frame batches.
pub trait NeuralRegressor: NodeRegressor + Clone {
    type Params: ParamSet;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;

    /// Mean squared error over `nodes` of one frame, and its gradient.
    ///
    /// `sample_rng` drives neighbourhood sampling, `drop` the dropout masks.
    fn batch_loss_grad(
        &self,
        g: &SpatialGraph,
        feats: &Tensor2,
        nodes: &[usize],
        targets: &[f64],
        sample_rng: &mut Rng,
        drop: &mut Dropout,
    ) -> Result<(f64, Self::Params)>;
}

impl<T: NodeRegressor + ?Sized> NodeRegressor for &T {
    fn predict_node(&self, g: &SpatialGraph, feats: &Tensor2, node: usize, rng: &mut Rng) -> Result<f64> {
        (**self).predict_node(g, feats, node, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sage,
    Mlp,
    Cnn,
    Gbt,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sage => "sage",
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
            ModelKind::Gbt => "gbt",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sage" | "graphsage" => Ok(ModelKind::Sage),
            "mlp" => Ok(ModelKind::Mlp),
            "cnn" => Ok(ModelKind::Cnn),
            "gbt" | "xgboost" => Ok(ModelKind::Gbt),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

/// Architecture and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Sage(SageConfig),
    Mlp(MlpConfig),
    Cnn(CnnConfig),
    Gbt(GbtConfig),
}

impl ModelSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Sage => ModelSpec::Sage(SageConfig::default()),
            ModelKind::Mlp => ModelSpec::Mlp(MlpConfig::default()),
            ModelKind::Cnn => ModelSpec::Cnn(CnnConfig::default()),
            ModelKind::Gbt => ModelSpec::Gbt(GbtConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Sage(_) => ModelKind::Sage,
            ModelSpec::Mlp(_) => ModelKind::Mlp,
            ModelSpec::Cnn(_) => ModelKind::Cnn,
            ModelSpec::Gbt(_) => ModelKind::Gbt,
        }
    }

    /// Same architecture with a different initialization seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            ModelSpec::Sage(c) => c.seed = seed,
            ModelSpec::Mlp(c) => c.seed = seed,
            ModelSpec::Cnn(c) => c.seed = seed,
            ModelSpec::Gbt(_) => {}
        }
        s
    }

    /// Freshly initialized neural model. Boosted trees have no untrained
    /// state and are built by fitting instead.
    pub fn init(&self, n_features: usize) -> Result<Model> {
        Ok(match self {
            ModelSpec::Sage(c) => Model::Sage(SageModel::new(c.clone(), n_features)?),
            ModelSpec::Mlp(c) => Model::Mlp(MlpModel::new(c.clone(), n_features)?),
            ModelSpec::Cnn(c) => Model::Cnn(CnnModel::new(c.clone(), n_features)?),
            ModelSpec::Gbt(_) => {
                return Err(Error::InvalidArgument("boosted trees are created by fitting".into()))
            }
        })
    }
}

/// Any trained regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Sage(SageModel),
    Mlp(MlpModel),
    Cnn(CnnModel),
    Gbt(GbtModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Sage(_) => ModelKind::Sage,
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Cnn(_) => ModelKind::Cnn,
            Model::Gbt(_) => ModelKind::Gbt,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Sage(m) => ModelSpec::Sage(m.config.clone()),
            Model::Mlp(m) => ModelSpec::Mlp(m.config.clone()),
            Model::Cnn(m) => ModelSpec::Cnn(m.config.clone()),
            Model::Gbt(m) => ModelSpec::Gbt(m.config.clone()),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Sage(m) => m.n_features(),
            Model::Mlp(m) => m.n_features(),
            Model::Cnn(m) => m.n_features,
            Model::Gbt(m) => m.n_features,
        }
    }

    /// Named parameter tensors in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor2)> {
        match self {
            Model::Sage(m) => owned(m.params.named_tensors()),
            Model::Mlp(m) => owned(m.params.named_tensors()),
            Model::Cnn(m) => owned(m.params.named_tensors()),
            Model::Gbt(m) => {
                let mut v = vec![("gbt.init".to_string(), Tensor2::filled(1, 1, m.init))];
                v.extend(m.trees.iter().enumerate().map(|(i, t)| (format!("tree{i}"), t.to_tensor())));
                v
            }
        }
    }
}

fn owned(v: Vec<(String, &Tensor2)>) -> Vec<(String, Tensor2)> {
    v.into_iter().map(|(n, t)| (n, t.clone())).collect()
}

impl NodeRegressor for Model {
    fn predict_node(&self, g: &SpatialGraph, feats: &Tensor2, node: usize, rng: &mut Rng) -> Result<f64> {
        match self {
            Model::Sage(m) => m.predict_node(g, feats, node, rng),
            Model::Mlp(m) => m.predict_node(g, feats, node, rng),
            Model::Cnn(m) => m.predict_node(g, feats, node, rng),
            Model::Gbt(m) => m.predict_node(g, feats, node, rng),
        }
    }
}

fn load_params<P: ParamSet>(params: &mut P, blocks: &BTreeMap<String, Tensor2>, prefix: &str) -> Result<()> {
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        let key = format!("{prefix}{name}");
        let b = blocks
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter block `{key}`")))?;
        if b.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "block `{key}` has shape {:?}, model expects {:?}",
                b.shape(),
                t.shape()
            )));
        }
        *t = b.clone();
    }
    Ok(())
}

impl Model {
    /// Rebuilds a model from its spec and named tensors (as produced by
    /// [`Model::named_tensors`], with `prefix` prepended).
    pub fn from_blocks(spec: &ModelSpec, n_features: usize, blocks: &BTreeMap<String, Tensor2>, prefix: &str) -> Result<Self> {
        match spec {
            ModelSpec::Gbt(c) => {
                let key = format!("{prefix}gbt.init");
                let init = blocks
                    .get(&key)
                    .filter(|t| t.shape() == (1, 1))
                    .ok_or_else(|| Error::Checkpoint(format!("missing block `{key}`")))?
                    .get(0, 0);
                let mut trees = Vec::new();
                while let Some(t) = blocks.get(&format!("{prefix}tree{}", trees.len())) {
                    trees.push(RegressionTree::from_tensor(t, n_features)?);
                }
                Ok(Model::Gbt(GbtModel {
                    config: c.clone(),
                    init,
                    trees,
                    n_features,
                }))
            }
            _ => {
                let mut m = spec.init(n_features)?;
                match &mut m {
                    Model::Sage(x) => load_params(&mut x.params, blocks, prefix)?,
                    Model::Mlp(x) => load_params(&mut x.params, blocks, prefix)?,
                    Model::Cnn(x) => load_params(&mut x.params, blocks, prefix)?,
                    Model::Gbt(_) => unreachable!(),
                }
                Ok(m)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}
