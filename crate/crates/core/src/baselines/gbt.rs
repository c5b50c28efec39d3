//! Least-squares gradient boosting over depth-limited regression trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geograph::SpatialGraph;
use crate::model::NodeRegressor;
use crate::tensor::Tensor2;
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn is_stump_leaf(&self) -> bool {
        self.nodes.len() == 1
    }

    /// `[n_nodes × 5]` rows of `(feature | -1, threshold, left, right, value)`.
    pub fn to_tensor(&self) -> Tensor2 {
        let mut t = Tensor2::zeros(self.nodes.len(), 5);
        for (i, n) in self.nodes.iter().enumerate() {
            let row = match *n {
                TreeNode::Leaf(v) => [-1.0, 0.0, 0.0, 0.0, v],
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => [feature as f64, threshold, left as f64, right as f64, 0.0],
            };
            t.row_mut(i).copy_from_slice(&row);
        }
        t
    }

    pub fn from_tensor(t: &Tensor2, n_features: usize) -> Result<Self> {
        if t.cols() != 5 || t.rows() == 0 {
            return Err(Error::Shape(format!("tree tensor must be [n × 5], got {:?}", t.shape())));
        }
        let n = t.rows();
        let idx = |v: f64, bound: usize| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < bound {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("tree index {v} out of range")))
            }
        };
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let r = t.row(i);
            nodes.push(if r[0] == -1.0 {
                TreeNode::Leaf(r[4])
            } else {
                let (left, right) = (idx(r[2], n)?, idx(r[3], n)?);
                if left <= i || right <= i {
                    return Err(Error::Checkpoint("tree children must follow their parent".into()));
                }
                TreeNode::Split {
                    feature: idx(r[0], n_features)?,
                    threshold: r[1],
                    left,
                    right,
                }
            });
        }
        Ok(Self { nodes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub config: GbtConfig,
    pub init: f64,
    pub trees: Vec<RegressionTree>,
    pub n_features: usize,
}

impl GbtModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init
            + self.config.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

pub fn gbt_predict(model: &GbtModel, features: &[f64]) -> f64 {
    model.predict(features)
}

impl NodeRegressor for GbtModel {
    fn predict_node(&self, _g: &SpatialGraph, feats: &Tensor2, node: usize, _rng: &mut Rng) -> Result<f64> {
        if feats.cols() != self.n_features {
            return Err(Error::Shape(format!(
                "boosted trees expect {} features, got {}",
                self.n_features,
                feats.cols()
            )));
        }
        Ok(self.predict(feats.row(node)))
    }
}

/// Result of boosting: the model and training MSE after the initial constant
/// and after each tree (`n_trees + 1` entries).
#[derive(Debug, Clone)]
pub struct GbtFit {
    pub model: GbtModel,
    pub train_mse: Vec<f64>,
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

/// Fits `config.n_trees` trees to squared-error residuals, starting from the
/// target mean.
pub fn gbt_fit(x: &[Vec<f64>], y: &[f64], config: &GbtConfig) -> Result<GbtFit> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("boosting needs training rows"));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} feature rows for {} targets", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("boosting needs at least 2 rows".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged feature rows".into()));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 || config.min_samples_leaf == 0 {
        return Err(Error::InvalidArgument(format!("invalid boosting config {config:?}")));
    }

    let n = y.len();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![init; n];
    let mut train_mse = vec![mse(&pred, y)];

    // per-feature row order, computed once
    let order: Vec<Vec<usize>> = (0..d)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            idx
        })
        .collect();

    let mut trees = Vec::with_capacity(config.n_trees);
    let mut residual = vec![0.0; n];
    for _ in 0..config.n_trees {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let tree = fit_tree(x, &residual, &order, config);
        for i in 0..n {
            pred[i] += config.learning_rate * tree.predict(&x[i]);
        }
        train_mse.push(mse(&pred, y));
        trees.push(tree);
    }
    Ok(GbtFit {
        model: GbtModel {
            config: config.clone(),
            init,
            trees,
            n_features: d,
        },
        train_mse,
    })
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Level-wise exact greedy tree: one pass per feature and depth.
fn fit_tree(x: &[Vec<f64>], r: &[f64], order: &[Vec<usize>], cfg: &GbtConfig) -> RegressionTree {
    let n = r.len();
    let mut nodes = vec![TreeNode::Leaf(0.0)];
    // tree node currently holding each row, None once its leaf is final
    let mut node_of: Vec<Option<usize>> = vec![Some(0); n];
    let mut open = vec![0usize];

    for depth in 0..=cfg.max_depth {
        let slot = |id: usize| open.iter().position(|&o| o == id).expect("open node");
        let mut total_cnt = vec![0usize; open.len()];
        let mut total_sum = vec![0.0; open.len()];
        let mut total_sq = vec![0.0; open.len()];
        for i in 0..n {
            if let Some(id) = node_of[i] {
                let s = slot(id);
                total_cnt[s] += 1;
                total_sum[s] += r[i];
                total_sq[s] += r[i] * r[i];
            }
        }

        let mut best: Vec<Option<Best>> = vec![None; open.len()];
        if depth < cfg.max_depth {
            // map node id -> slot for O(1) lookup during scans
            let mut slot_of = vec![usize::MAX; nodes.len()];
            for (s, &id) in open.iter().enumerate() {
                slot_of[id] = s;
            }
            for (f, ord) in order.iter().enumerate() {
                let mut cnt = vec![0usize; open.len()];
                let mut sum = vec![0.0; open.len()];
                let mut last = vec![f64::NAN; open.len()];
                for &i in ord {
                    let Some(id) = node_of[i] else { continue };
                    let s = slot_of[id];
                    let v = x[i][f];
                    if cnt[s] >= cfg.min_samples_leaf && v > last[s] && total_cnt[s] - cnt[s] >= cfg.min_samples_leaf {
                        let (nl, nr) = (cnt[s] as f64, (total_cnt[s] - cnt[s]) as f64);
                        let (sl, sr) = (sum[s], total_sum[s] - sum[s]);
                        let gain = sl * sl / nl + sr * sr / nr - total_sum[s] * total_sum[s] / total_cnt[s] as f64;
                        if gain > 1e-12 * total_sq[s] && best[s].is_none_or(|b| gain > b.gain) {
                            let mut threshold = 0.5 * (last[s] + v);
                            if threshold >= v {
                                threshold = last[s];
                            }
                            best[s] = Some(Best {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                    cnt[s] += 1;
                    sum[s] += r[i];
                    last[s] = v;
                }
            }
        }

        let mut next_open = Vec::new();
        let mut children = vec![None; open.len()];
        for (s, &id) in open.iter().enumerate() {
            match best[s] {
                Some(b) => {
                    let left = nodes.len();
                    nodes.push(TreeNode::Leaf(0.0));
                    nodes.push(TreeNode::Leaf(0.0));
                    nodes[id] = TreeNode::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left,
                        right: left + 1,
                    };
                    next_open.extend([left, left + 1]);
                    children[s] = Some((b, left));
                }
                None => {
                    nodes[id] = TreeNode::Leaf(total_sum[s] / total_cnt[s].max(1) as f64);
                }
            }
        }
        for i in 0..n {
            if let Some(id) = node_of[i] {
                node_of[i] = children[slot(id)].map(|(b, left)| if x[i][b.feature] <= b.threshold { left } else { left + 1 });
            }
        }
        open = next_open;
        if open.is_empty() {
            break;
        }
    }
    RegressionTree { nodes }
}
