//! Two-layer GraphSAGE regressor with sampled neighbourhoods, four
//! aggregators, teacher-forced training rows and closed-loop rollout.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ReadPurpose, TargetSource, PREV_NO2};
use crate::error::{Error, Result};
use crate::geograph::{sample_neighborhood, Neighborhood, SampleBudget, SpatialGraph};
use crate::model::{NeuralRegressor, NodeRegressor};
use crate::nn::{
    glorot_uniform, leaky_relu, sigmoid, zeros_like, DenseLayer, Dropout, Mode, ParamSet,
    LEAKY_SLOPE,
};
use crate::tensor::{mat_vec_acc, outer_acc, vec_mat_acc, Tensor2};
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Mean,
    MaxPool,
    #[default]
    MeanPool,
    Attentional,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 4] = [
        AggregatorKind::Mean,
        AggregatorKind::MaxPool,
        AggregatorKind::MeanPool,
        AggregatorKind::Attentional,
    ];

    fn is_pooling(self) -> bool {
        matches!(self, AggregatorKind::MaxPool | AggregatorKind::MeanPool)
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max_pool" | "maxpool" => Ok(Self::MaxPool),
            "mean_pool" | "meanpool" => Ok(Self::MeanPool),
            "attentional" | "attention" => Ok(Self::Attentional),
            other => Err(Error::InvalidArgument(format!("unknown aggregator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageConfig {
    pub aggregator: AggregatorKind,
    pub hidden: [usize; 2],
    pub pool_dim: usize,
    pub budget: SampleBudget,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            aggregator: AggregatorKind::MeanPool,
            hidden: [32, 32],
            pool_dim: 32,
            budget: SampleBudget::default(),
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        if self.hidden.contains(&0) || self.pool_dim == 0 {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Weights of one aggregation layer.
///
/// `pre = x·W_self + agg·W_neigh + b` for mean and pooling aggregators. The
/// attentional aggregator projects both the centre and the neighbours with
/// `W_neigh` and adds the attention-weighted neighbour projections directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    pub w_self: Tensor2,
    pub w_neigh: Tensor2,
    pub bias: Tensor2,
    pub pool: Option<DenseLayer>,
    pub attn: Option<Tensor2>,
}

impl SageLayer {
    pub fn new(kind: AggregatorKind, d_in: usize, d_out: usize, pool_dim: usize, rng: &mut Rng) -> Self {
        let w_self = glorot_uniform(d_in, d_out, rng);
        let (w_neigh, pool, attn) = match kind {
            AggregatorKind::Mean => (glorot_uniform(d_in, d_out, rng), None, None),
            AggregatorKind::MaxPool | AggregatorKind::MeanPool => {
                let pool = DenseLayer::new(d_in, pool_dim, rng);
                (glorot_uniform(pool_dim, d_out, rng), Some(pool), None)
            }
            AggregatorKind::Attentional => {
                let w = glorot_uniform(d_in, d_out, rng);
                let a = glorot_uniform(1, 2 * d_out, rng);
                (w, None, Some(a))
            }
        };
        Self {
            w_self,
            w_neigh,
            bias: Tensor2::zeros(1, d_out),
            pool,
            attn,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_self.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w_self.cols()
    }

    /// Width of the aggregated neighbour vector before `W_neigh`.
    pub fn d_agg(&self) -> usize {
        self.w_neigh.rows()
    }
}

impl ParamSet for SageLayer {
    fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        let mut v = vec![
            ("w_self".to_string(), &self.w_self),
            ("w_neigh".to_string(), &self.w_neigh),
            ("bias".to_string(), &self.bias),
        ];
        if let Some(p) = &self.pool {
            v.push(("pool.w".to_string(), &p.w));
            v.push(("pool.b".to_string(), &p.b));
        }
        if let Some(a) = &self.attn {
            v.push(("attn".to_string(), a));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = vec![&mut self.w_self, &mut self.w_neigh, &mut self.bias];
        if let Some(p) = &mut self.pool {
            v.push(&mut p.w);
            v.push(&mut p.b);
        }
        if let Some(a) = &mut self.attn {
            v.push(a);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageParams {
    pub layers: Vec<SageLayer>,
    pub head: DenseLayer,
}

impl SageParams {
    pub fn new(cfg: &SageConfig, n_features: usize, rng: &mut Rng) -> Self {
        let l1 = SageLayer::new(cfg.aggregator, n_features, cfg.hidden[0], cfg.pool_dim, rng);
        let l2 = SageLayer::new(cfg.aggregator, cfg.hidden[0], cfg.hidden[1], cfg.pool_dim, rng);
        let head = DenseLayer::new(cfg.hidden[1], 1, rng);
        Self {
            layers: vec![l1, l2],
            head,
        }
    }
}

impl ParamSet for SageParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(l.named_tensors().into_iter().map(|(n, t)| (format!("layer{i}.{n}"), t)));
        }
        v.push(("head.w".to_string(), &self.head.w));
        v.push(("head.b".to_string(), &self.head.b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v.push(&mut self.head.w);
        v.push(&mut self.head.b);
        v
    }
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct AggCache {
    /// Pooling aggregators: sigmoid outputs per neighbour.
    pooled: Vec<Vec<f64>>,
    /// Max pooling: winning neighbour per output coordinate.
    argmax: Vec<usize>,
    /// Attention: projected centre and neighbours, raw scores, weights.
    z_self: Vec<f64>,
    z: Vec<Vec<f64>>,
    scores: Vec<f64>,
    alpha: Vec<f64>,
    /// Aggregated vector (attention: already in output space).
    agg: Vec<f64>,
}

fn check_dims(layer: &SageLayer, self_feat: &[f64], neigh: &[&[f64]]) -> Result<()> {
    let d = layer.d_in();
    if self_feat.len() != d || neigh.iter().any(|u| u.len() != d) {
        return Err(Error::Shape(format!("aggregation layer expects {d}-dimensional inputs")));
    }
    Ok(())
}

fn aggregate_cached(kind: AggregatorKind, layer: &SageLayer, self_feat: &[f64], neigh: &[&[f64]]) -> AggCache {
    let mut c = AggCache::default();
    let n = neigh.len();
    match kind {
        AggregatorKind::Mean => {
            let mut agg = vec![0.0; layer.d_agg()];
            for u in neigh {
                for (a, v) in agg.iter_mut().zip(*u) {
                    *a += v;
                }
            }
            if n > 0 {
                agg.iter_mut().for_each(|a| *a /= n as f64);
            }
            c.agg = agg;
        }
        AggregatorKind::MaxPool | AggregatorKind::MeanPool => {
            let pool = layer.pool.as_ref().expect("pooling weights");
            c.pooled = neigh
                .iter()
                .map(|u| pool.forward_vec(u).into_iter().map(sigmoid).collect())
                .collect();
            let d = layer.d_agg();
            let mut agg = vec![0.0; d];
            if n > 0 {
                if kind == AggregatorKind::MaxPool {
                    c.argmax = vec![0; d];
                    for j in 0..d {
                        let mut best = 0;
                        for k in 1..n {
                            if c.pooled[k][j] > c.pooled[best][j] {
                                best = k;
                            }
                        }
                        c.argmax[j] = best;
                        agg[j] = c.pooled[best][j];
                    }
                } else {
                    for p in &c.pooled {
                        for (a, v) in agg.iter_mut().zip(p) {
                            *a += v;
                        }
                    }
                    agg.iter_mut().for_each(|a| *a /= n as f64);
                }
            }
            c.agg = agg;
        }
        AggregatorKind::Attentional => {
            let a = layer.attn.as_ref().expect("attention vector").data();
            let d = layer.d_out();
            let mut z_self = vec![0.0; d];
            vec_mat_acc(self_feat, &layer.w_neigh, &mut z_self);
            let base: f64 = a[..d].iter().zip(&z_self).map(|(x, y)| x * y).sum();
            c.z = neigh
                .iter()
                .map(|u| {
                    let mut z = vec![0.0; d];
                    vec_mat_acc(u, &layer.w_neigh, &mut z);
                    z
                })
                .collect();
            c.scores = c
                .z
                .iter()
                .map(|z| base + a[d..].iter().zip(z).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            c.alpha = softmax(&c.scores.iter().map(|&e| leaky_relu(e, LEAKY_SLOPE)).collect::<Vec<_>>());
            let mut agg = vec![0.0; d];
            for (w, z) in c.alpha.iter().zip(&c.z) {
                for (acc, v) in agg.iter_mut().zip(z) {
                    *acc += w * v;
                }
            }
            c.agg = agg;
            c.z_self = z_self;
        }
    }
    c
}

fn softmax(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Aggregated neighbour representation for one centre node.
///
/// Mean, max-pool and mean-pool return a vector of the layer's aggregation
/// width (feature width or pool width); attention returns the
/// attention-weighted sum of projected neighbours. An empty neighbourhood
/// yields the zero vector.
pub fn aggregate(kind: AggregatorKind, layer: &SageLayer, self_feat: &[f64], neigh: &[&[f64]]) -> Result<Vec<f64>> {
    check_dims(layer, self_feat, neigh)?;
    if layer.pool.is_none() && kind.is_pooling() || layer.attn.is_none() && kind == AggregatorKind::Attentional {
        return Err(Error::Shape(format!("layer has no weights for {kind:?} aggregation")));
    }
    Ok(aggregate_cached(kind, layer, self_feat, neigh).agg)
}

/// Attention coefficients over `neigh` (empty for an empty neighbourhood).
pub fn attention_weights(layer: &SageLayer, self_feat: &[f64], neigh: &[&[f64]]) -> Result<Vec<f64>> {
    check_dims(layer, self_feat, neigh)?;
    if layer.attn.is_none() {
        return Err(Error::Shape("layer has no attention vector".into()));
    }
    Ok(aggregate_cached(AggregatorKind::Attentional, layer, self_feat, neigh).alpha)
}

// ---------------------------------------------------------------------------
// Layer forward / backward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    neigh: Vec<Vec<f64>>,
    agg: AggCache,
    /// Pre-activation after dropout.
    dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
}

fn layer_forward(
    kind: AggregatorKind,
    layer: &SageLayer,
    rate: f64,
    x: &[f64],
    neigh: &[&[f64]],
    drop: &mut Dropout,
) -> (Vec<f64>, LayerCache) {
    let agg = aggregate_cached(kind, layer, x, neigh);
    let mut pre = layer.bias.data().to_vec();
    vec_mat_acc(x, &layer.w_self, &mut pre);
    if kind == AggregatorKind::Attentional {
        for (p, a) in pre.iter_mut().zip(&agg.agg) {
            *p += a;
        }
    } else {
        vec_mat_acc(&agg.agg, &layer.w_neigh, &mut pre);
    }
    let mask = drop.apply(rate, &mut pre);
    let h = pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let cache = LayerCache {
        input: x.to_vec(),
        neigh: neigh.iter().map(|u| u.to_vec()).collect(),
        agg,
        dropped: pre,
        mask,
    };
    (h, cache)
}

/// Accumulates parameter gradients for one layer application; optionally
/// returns input gradients for the centre and each neighbour.
fn layer_backward(
    kind: AggregatorKind,
    layer: &SageLayer,
    cache: &LayerCache,
    dh: &[f64],
    grad: &mut SageLayer,
    want_inputs: bool,
) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut dpre: Vec<f64> = dh
        .iter()
        .zip(&cache.dropped)
        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
        .collect();
    if let Some(m) = &cache.mask {
        for (d, mk) in dpre.iter_mut().zip(m) {
            *d *= mk;
        }
    }
    for (g, d) in grad.bias.data_mut().iter_mut().zip(&dpre) {
        *g += d;
    }
    outer_acc(&cache.input, &dpre, &mut grad.w_self);

    let n = cache.neigh.len();
    let mut dx = if want_inputs {
        let mut dx = vec![0.0; layer.d_in()];
        mat_vec_acc(&layer.w_self, &dpre, &mut dx);
        Some(dx)
    } else {
        None
    };
    let mut dneigh = vec![vec![0.0; layer.d_in()]; if want_inputs { n } else { 0 }];
    if n == 0 {
        return dx.map(|dx| (dx, dneigh));
    }

    let c = &cache.agg;
    match kind {
        AggregatorKind::Mean | AggregatorKind::MaxPool | AggregatorKind::MeanPool => {
            outer_acc(&c.agg, &dpre, &mut grad.w_neigh);
            let mut dagg = vec![0.0; layer.d_agg()];
            mat_vec_acc(&layer.w_neigh, &dpre, &mut dagg);
            match kind {
                AggregatorKind::Mean => {
                    if want_inputs {
                        for du in &mut dneigh {
                            for (a, b) in du.iter_mut().zip(&dagg) {
                                *a += b / n as f64;
                            }
                        }
                    }
                }
                _ => {
                    let pool = layer.pool.as_ref().expect("pooling weights");
                    let gpool = grad.pool.as_mut().expect("pooling grads");
                    let mut dp = vec![vec![0.0; layer.d_agg()]; n];
                    if kind == AggregatorKind::MaxPool {
                        for (j, &k) in c.argmax.iter().enumerate() {
                            dp[k][j] = dagg[j];
                        }
                    } else {
                        for row in &mut dp {
                            for (a, b) in row.iter_mut().zip(&dagg) {
                                *a = b / n as f64;
                            }
                        }
                    }
                    for k in 0..n {
                        let dq: Vec<f64> = dp[k]
                            .iter()
                            .zip(&c.pooled[k])
                            .map(|(g, p)| g * p * (1.0 - p))
                            .collect();
                        pool.backward_vec(
                            &cache.neigh[k],
                            &dq,
                            gpool,
                            if want_inputs { Some(&mut dneigh[k]) } else { None },
                        );
                    }
                }
            }
        }
        AggregatorKind::Attentional => {
            let a = layer.attn.as_ref().expect("attention vector").data();
            let d = layer.d_out();
            // pre += Σ α_k z_k
            let dalpha: Vec<f64> = c.z.iter().map(|z| z.iter().zip(&dpre).map(|(x, y)| x * y).sum()).collect();
            let s: f64 = c.alpha.iter().zip(&dalpha).map(|(x, y)| x * y).sum();
            let mut dz_self = vec![0.0; d];
            let mut da = vec![0.0; 2 * d];
            let gw = &mut grad.w_neigh;
            for k in 0..n {
                let dl = c.alpha[k] * (dalpha[k] - s);
                let de = if c.scores[k] > 0.0 { dl } else { LEAKY_SLOPE * dl };
                let mut dz: Vec<f64> = dpre.iter().map(|g| c.alpha[k] * g).collect();
                for j in 0..d {
                    da[j] += de * c.z_self[j];
                    da[d + j] += de * c.z[k][j];
                    dz_self[j] += de * a[j];
                    dz[j] += de * a[d + j];
                }
                outer_acc(&cache.neigh[k], &dz, gw);
                if want_inputs {
                    mat_vec_acc(&layer.w_neigh, &dz, &mut dneigh[k]);
                }
            }
            outer_acc(&cache.input, &dz_self, gw);
            if let Some(dx) = dx.as_mut() {
                mat_vec_acc(&layer.w_neigh, &dz_self, dx);
            }
            let ga = grad.attn.as_mut().expect("attention grads");
            for (g, v) in ga.data_mut().iter_mut().zip(&da) {
                *g += v;
            }
        }
    }
    dx.map(|dx| (dx, dneigh))
}

// ---------------------------------------------------------------------------
// Two-layer forward / backward for one target node
// ---------------------------------------------------------------------------

struct NodeCache {
    l1_center: LayerCache,
    l1_hop1: Vec<LayerCache>,
    l2: LayerCache,
    h2: Vec<f64>,
}

fn forward_node(
    params: &SageParams,
    cfg: &SageConfig,
    feats: &Tensor2,
    node: usize,
    nb: &Neighborhood,
    drop: &mut Dropout,
) -> (f64, NodeCache) {
    let kind = cfg.aggregator;
    let rate = cfg.dropout;
    let [l1, l2] = [&params.layers[0], &params.layers[1]];

    let hop1_feats: Vec<&[f64]> = nb.hop1.iter().map(|&u| feats.row(u)).collect();
    let (h1_center, l1_center) = layer_forward(kind, l1, rate, feats.row(node), &hop1_feats, drop);

    let mut h1_hop1 = Vec::with_capacity(nb.hop1.len());
    let mut l1_hop1 = Vec::with_capacity(nb.hop1.len());
    for (&u, second) in nb.hop1.iter().zip(&nb.hop2) {
        let nf: Vec<&[f64]> = second.iter().map(|&w| feats.row(w)).collect();
        let (h, c) = layer_forward(kind, l1, rate, feats.row(u), &nf, drop);
        h1_hop1.push(h);
        l1_hop1.push(c);
    }

    let refs: Vec<&[f64]> = h1_hop1.iter().map(Vec::as_slice).collect();
    let (h2, l2c) = layer_forward(kind, l2, rate, &h1_center, &refs, drop);
    let y = params.head.forward_vec(&h2)[0];
    (
        y,
        NodeCache {
            l1_center,
            l1_hop1,
            l2: l2c,
            h2,
        },
    )
}

fn backward_node(params: &SageParams, cfg: &SageConfig, cache: &NodeCache, dy: f64, grads: &mut SageParams) {
    let kind = cfg.aggregator;
    let mut dh2 = vec![0.0; cache.h2.len()];
    params.head.backward_vec(&cache.h2, &[dy], &mut grads.head, Some(&mut dh2));

    let (gl1, gl2) = grads.layers.split_at_mut(1);
    let (dh1_center, dh1_hop1) =
        layer_backward(kind, &params.layers[1], &cache.l2, &dh2, &mut gl2[0], true).expect("input grads");
    layer_backward(kind, &params.layers[0], &cache.l1_center, &dh1_center, &mut gl1[0], false);
    for (c, dh) in cache.l1_hop1.iter().zip(&dh1_hop1) {
        layer_backward(kind, &params.layers[0], c, dh, &mut gl1[0], false);
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageModel {
    pub config: SageConfig,
    pub params: SageParams,
}

impl SageModel {
    pub fn new(config: SageConfig, n_features: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed);
        let params = SageParams::new(&config, n_features, &mut rng);
        Ok(Self { config, params })
    }

    pub fn n_features(&self) -> usize {
        self.params.layers[0].d_in()
    }

    fn check_input(&self, g: &SpatialGraph, feats: &Tensor2, node: usize) -> Result<()> {
        if feats.cols() != self.n_features() {
            return Err(Error::Shape(format!(
                "model expects {} features, frame has {}",
                self.n_features(),
                feats.cols()
            )));
        }
        if feats.rows() != g.n_nodes() {
            return Err(Error::Shape(format!(
                "frame has {} rows for a graph of {} nodes",
                feats.rows(),
                g.n_nodes()
            )));
        }
        if node >= g.n_nodes() {
            return Err(Error::InvalidArgument(format!("node {node} outside graph")));
        }
        Ok(())
    }

    /// Prediction for `node` on a fixed, pre-sampled neighbourhood.
    pub fn forward_sampled(&self, feats: &Tensor2, node: usize, nb: &Neighborhood, drop: &mut Dropout) -> f64 {
        forward_node(&self.params, &self.config, feats, node, nb, drop).0
    }

    /// MSE over `nodes` with fixed neighbourhoods, and its gradient.
    pub fn loss_grad_sampled(
        &self,
        feats: &Tensor2,
        nodes: &[usize],
        nbs: &[Neighborhood],
        targets: &[f64],
        drop: &mut Dropout,
    ) -> (f64, SageParams) {
        let mut grads = zeros_like(&self.params);
        let n = nodes.len() as f64;
        let mut loss = 0.0;
        for ((&v, nb), &y) in nodes.iter().zip(nbs).zip(targets) {
            let (pred, cache) = forward_node(&self.params, &self.config, feats, v, nb, drop);
            let d = pred - y;
            loss += d * d;
            backward_node(&self.params, &self.config, &cache, 2.0 * d / n, &mut grads);
        }
        (loss / n, grads)
    }
}

/// Samples a neighbourhood and runs the two-layer forward pass. Dropout is
/// active only in [`Mode::Train`].
pub fn sage_forward(
    model: &SageModel,
    g: &SpatialGraph,
    feats: &Tensor2,
    node: usize,
    rng: &mut Rng,
    mode: Mode,
) -> Result<f64> {
    model.check_input(g, feats, node)?;
    let nb = sample_neighborhood(g, node, &model.config.budget, rng);
    let mut drop = match mode {
        Mode::Train => Dropout::Train(rng),
        Mode::Eval => Dropout::Eval,
    };
    Ok(model.forward_sampled(feats, node, &nb, &mut drop))
}

impl NodeRegressor for SageModel {
    fn predict_node(&self, g: &SpatialGraph, feats: &Tensor2, node: usize, rng: &mut Rng) -> Result<f64> {
        sage_forward(self, g, feats, node, rng, Mode::Eval)
    }
}

impl NeuralRegressor for SageModel {
    type Params = SageParams;

    fn params(&self) -> &SageParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut SageParams {
        &mut self.params
    }

    fn batch_loss_grad(
        &self,
        g: &SpatialGraph,
        feats: &Tensor2,
        nodes: &[usize],
        targets: &[f64],
        sample_rng: &mut Rng,
        drop: &mut Dropout,
    ) -> Result<(f64, SageParams)> {
        if nodes.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        for &v in nodes {
            self.check_input(g, feats, v)?;
        }
        let nbs: Vec<Neighborhood> = nodes
            .iter()
            .map(|&v| sample_neighborhood(g, v, &self.config.budget, sample_rng))
            .collect();
        Ok(self.loss_grad_sampled(feats, nodes, &nbs, targets, drop))
    }
}

// ---------------------------------------------------------------------------
// Training rows and rollout
// ---------------------------------------------------------------------------

/// One teacher-forced supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub frame: usize,
    pub node: usize,
    /// Feature row whose autoregressive slot holds the actual previous NO₂
    /// (or its same-hour fallback).
    pub features: Vec<f64>,
    pub target: f64,
}

/// One row per present sensor for every frame after the first.
pub fn make_training_rows(ds: &Dataset, g: &SpatialGraph) -> Result<Vec<TrainingRow>> {
    if g.n_nodes() != ds.n_sensors() {
        return Err(Error::Shape(format!(
            "graph has {} nodes, dataset {} sensors",
            g.n_nodes(),
            ds.n_sensors()
        )));
    }
    let mut rows = Vec::new();
    for (t, f) in ds.frames.iter().enumerate().skip(1) {
        for s in 0..ds.n_sensors() {
            if let Some(y) = f.target(s) {
                rows.push(TrainingRow {
                    frame: t,
                    node: s,
                    features: f.features.row(s).to_vec(),
                    target: y,
                });
            }
        }
    }
    Ok(rows)
}

/// Initial previous-hour value for a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// The node's actual reading at the first frame.
    ActualFirst,
    FixedEstimate(f64),
    /// Mean of every present reading in the dataset.
    DatasetMean,
}

/// Generator used for neighbourhood sampling at rollout step `t`.
pub fn rollout_step_rng(seed: u64, t: usize) -> Rng {
    seeded_rng(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Closed-loop prediction of `node` for frames `1..n_frames`.
///
/// The node's autoregressive input starts at the init value and afterwards
/// holds the model's own previous prediction. Every other node keeps its
/// dataset features. `truth` is read once, and only for
/// [`InitScheme::ActualFirst`].
pub fn rollout<M, S>(
    model: &M,
    g: &SpatialGraph,
    ds: &Dataset,
    truth: &S,
    node: usize,
    init: InitScheme,
    seed: u64,
) -> Result<Vec<f64>>
where
    M: NodeRegressor + ?Sized,
    S: TargetSource + ?Sized,
{
    if node >= ds.n_sensors() {
        return Err(Error::InvalidArgument(format!(
            "node {node} outside dataset of {} sensors",
            ds.n_sensors()
        )));
    }
    if ds.n_frames() == 0 {
        return Err(Error::Empty("rollout over an empty dataset"));
    }
    let mut prev = match init {
        InitScheme::ActualFirst => truth.target(0, node, ReadPurpose::RolloutInit).ok_or_else(|| {
            Error::InvalidArgument(format!("node {node} has no reading at the first frame"))
        })?,
        InitScheme::FixedEstimate(c) => c,
        InitScheme::DatasetMean => ds.mean_no2(),
    };
    let mut out = Vec::with_capacity(ds.n_frames().saturating_sub(1));
    for t in 1..ds.n_frames() {
        let mut feats = ds.frames[t].features.clone();
        feats.set(node, PREV_NO2, ds.encode_prev(prev));
        let y = model.predict_node(g, &feats, node, &mut rollout_step_rng(seed, t))?;
        out.push(y);
        prev = y;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::Rng as _;

    fn random_feats(n: usize, d: usize, rng: &mut Rng) -> Tensor2 {
        Tensor2::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn five_node_graph() -> SpatialGraph {
        SpatialGraph::from_edges(5, &[(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0), (3, 4, 1.0), (0, 4, 1.0)])
            .unwrap()
    }

    #[test]
    fn mean_of_identical_neighbors() {
        let mut rng = seeded_rng(1);
        let layer = SageLayer::new(AggregatorKind::Mean, 3, 4, 8, &mut rng);
        let v = [0.5, -1.0, 2.0];
        let agg = aggregate(AggregatorKind::Mean, &layer, &[0.0; 3], &[&v, &v, &v]).unwrap();
        for (a, b) in agg.iter().zip(v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_neighbor_max_equals_mean_pool() {
        let mut rng = seeded_rng(2);
        let layer = SageLayer::new(AggregatorKind::MaxPool, 3, 4, 6, &mut rng);
        let u = [0.1, 0.2, -0.3];
        let a = aggregate(AggregatorKind::MaxPool, &layer, &[1.0; 3], &[&u]).unwrap();
        let b = aggregate(AggregatorKind::MeanPool, &layer, &[1.0; 3], &[&u]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_neighborhood_is_zero() {
        let mut rng = seeded_rng(3);
        for kind in AggregatorKind::ALL {
            let layer = SageLayer::new(kind, 3, 4, 5, &mut rng);
            let agg = aggregate(kind, &layer, &[1.0, 2.0, 3.0], &[]).unwrap();
            assert!(agg.iter().all(|&v| v == 0.0), "{kind:?}");
            let width = if kind == AggregatorKind::Attentional { 4 } else { layer.d_agg() };
            assert_eq!(agg.len(), width);
        }
    }

    #[test]
    fn aggregate_dimension_mismatch() {
        let mut rng = seeded_rng(4);
        let layer = SageLayer::new(AggregatorKind::Mean, 3, 4, 5, &mut rng);
        assert!(aggregate(AggregatorKind::Mean, &layer, &[1.0; 2], &[]).is_err());
        assert!(aggregate(AggregatorKind::MeanPool, &layer, &[1.0; 3], &[]).is_err());
    }

    #[test]
    fn edgeless_graph_uses_self_features_only() {
        let cfg = SageConfig {
            seed: 5,
            ..SageConfig::default()
        };
        let model = SageModel::new(cfg, 4).unwrap();
        let g = SpatialGraph::empty(3);
        let mut rng = seeded_rng(0);
        let mut feats = random_feats(3, 4, &mut rng);
        let a = sage_forward(&model, &g, &feats, 0, &mut rng, Mode::Eval).unwrap();
        feats.row_mut(1).iter_mut().for_each(|v| *v += 10.0);
        let b = sage_forward(&model, &g, &feats, 0, &mut rng, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_is_deterministic() {
        let model = SageModel::new(SageConfig::default(), 4).unwrap();
        let g = five_node_graph();
        let feats = random_feats(5, 4, &mut seeded_rng(8));
        let a = sage_forward(&model, &g, &feats, 3, &mut seeded_rng(1), Mode::Eval).unwrap();
        let b = sage_forward(&model, &g, &feats, 3, &mut seeded_rng(2), Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = five_node_graph();
        for kind in AggregatorKind::ALL {
            let cfg = SageConfig {
                aggregator: kind,
                hidden: [6, 5],
                pool_dim: 4,
                seed: 11,
                ..SageConfig::default()
            };
            let model = SageModel::new(cfg, 3).unwrap();
            let mut rng = seeded_rng(12);
            let feats = random_feats(5, 3, &mut rng);
            let nodes = [0, 1, 2, 3, 4];
            let targets: Vec<f64> = nodes.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let nbs: Vec<_> = nodes.iter().map(|&v| sample_neighborhood(&g, v, &model.config.budget, &mut rng)).collect();
            let mut drop_rng = seeded_rng(13);
            let mut rec = Dropout::Record(&mut drop_rng, Vec::new());
            model.loss_grad_sampled(&feats, &nodes, &nbs, &targets, &mut rec);
            let tape = rec.into_replay();
            let Dropout::Replay(tape, _) = tape else { unreachable!() };
            let f = |p: &SageParams| {
                let m = SageModel {
                    config: model.config.clone(),
                    params: p.clone(),
                };
                m.loss_grad_sampled(&feats, &nodes, &nbs, &targets, &mut Dropout::Replay(tape.clone(), 0))
            };
            let err = grad_check(f, &model.params, 1e-5);
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }
}
