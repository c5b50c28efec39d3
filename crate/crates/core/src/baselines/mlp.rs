use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geograph::SpatialGraph;
use crate::model::{NeuralRegressor, NodeRegressor};
use crate::nn::{zeros_like, DenseLayer, Dropout, Mode, ParamSet};
use crate::tensor::Tensor2;
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: [usize; 3],
    pub dropout: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 64, 32],
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Two dense layers, dropout, two more dense layers. ReLU between layers,
/// linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl ParamSet for MlpParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("dense{i}.w"), &l.w), (format!("dense{i}.b"), &l.b)])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub params: MlpParams,
}

struct MlpCache {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    mask: Option<Vec<f64>>,
    d2: Vec<f64>,
    h3: Vec<f64>,
}

fn relu_vec(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn relu_grad(d: &mut [f64], out: &[f64]) {
    for (g, &o) in d.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

impl MlpModel {
    pub fn new(config: MlpConfig, n_features: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&config.dropout) || config.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid MLP config {config:?}")));
        }
        let mut rng = seeded_rng(config.seed);
        let [a, b, c] = config.hidden;
        let dims = [n_features, a, b, c, 1];
        let layers = dims.windows(2).map(|w| DenseLayer::new(w[0], w[1], &mut rng)).collect();
        Ok(Self {
            config,
            params: MlpParams { layers },
        })
    }

    pub fn n_features(&self) -> usize {
        self.params.layers[0].fan_in()
    }

    fn forward_cached(&self, x: &[f64], drop: &mut Dropout) -> (f64, MlpCache) {
        let l = &self.params.layers;
        let mut h1 = l[0].forward_vec(x);
        relu_vec(&mut h1);
        let mut h2 = l[1].forward_vec(&h1);
        relu_vec(&mut h2);
        let mut d2 = h2.clone();
        let mask = drop.apply(self.config.dropout, &mut d2);
        let mut h3 = l[2].forward_vec(&d2);
        relu_vec(&mut h3);
        let y = l[3].forward_vec(&h3)[0];
        (
            y,
            MlpCache {
                x: x.to_vec(),
                h1,
                h2,
                mask,
                d2,
                h3,
            },
        )
    }

    fn backward(&self, c: &MlpCache, dy: f64, g: &mut MlpParams) {
        let l = &self.params.layers;
        let mut dh3 = vec![0.0; c.h3.len()];
        l[3].backward_vec(&c.h3, &[dy], &mut g.layers[3], Some(&mut dh3));
        relu_grad(&mut dh3, &c.h3);
        let mut dd2 = vec![0.0; c.d2.len()];
        l[2].backward_vec(&c.d2, &dh3, &mut g.layers[2], Some(&mut dd2));
        if let Some(m) = &c.mask {
            dd2.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        relu_grad(&mut dd2, &c.h2);
        let mut dh1 = vec![0.0; c.h1.len()];
        l[1].backward_vec(&c.h1, &dd2, &mut g.layers[1], Some(&mut dh1));
        relu_grad(&mut dh1, &c.h1);
        l[0].backward_vec(&c.x, &dh1, &mut g.layers[0], None);
    }

    pub fn forward(&self, x: &[f64], mode: Mode, rng: &mut Rng) -> Result<f64> {
        self.check_width(x.len())?;
        let mut drop = match mode {
            Mode::Train => Dropout::Train(rng),
            Mode::Eval => Dropout::Eval,
        };
        Ok(self.forward_cached(x, &mut drop).0)
    }

    /// MSE over feature rows and its gradient.
    pub fn loss_grad_rows(&self, rows: &[&[f64]], targets: &[f64], drop: &mut Dropout) -> (f64, MlpParams) {
        let mut grads = zeros_like(&self.params);
        let n = rows.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in rows.iter().zip(targets) {
            let (p, c) = self.forward_cached(x, drop);
            let d = p - y;
            loss += d * d;
            self.backward(&c, 2.0 * d / n, &mut grads);
        }
        (loss / n, grads)
    }

    fn check_width(&self, d: usize) -> Result<()> {
        if d != self.n_features() {
            return Err(Error::Shape(format!("MLP expects {} features, got {d}", self.n_features())));
        }
        Ok(())
    }
}

pub fn mlp_forward(model: &MlpModel, features: &[f64], mode: Mode, rng: &mut Rng) -> Result<f64> {
    model.forward(features, mode, rng)
}

impl NodeRegressor for MlpModel {
    fn predict_node(&self, _g: &SpatialGraph, feats: &Tensor2, node: usize, rng: &mut Rng) -> Result<f64> {
        self.forward(feats.row(node), Mode::Eval, rng)
    }
}

impl NeuralRegressor for MlpModel {
    type Params = MlpParams;

    fn params(&self) -> &MlpParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    fn batch_loss_grad(
        &self,
        _g: &SpatialGraph,
        feats: &Tensor2,
        nodes: &[usize],
        targets: &[f64],
        _sample_rng: &mut Rng,
        drop: &mut Dropout,
    ) -> Result<(f64, MlpParams)> {
        if nodes.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        self.check_width(feats.cols())?;
        let rows: Vec<&[f64]> = nodes.iter().map(|&v| feats.row(v)).collect();
        Ok(self.loss_grad_rows(&rows, targets, drop))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{assign_flat, flatten, grad_check};

    // Zero biases put ReLU inputs exactly on the kink whenever dropout
    // silences a whole layer input, which breaks finite differences.
    fn jitter_params<P: ParamSet>(p: &mut P, seed: u64) {
        let mut rng = seeded_rng(seed ^ 0xb1a5);
        let noisy: Vec<f64> = flatten(p).iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        assign_flat(p, &noisy);
    }
    use rand::Rng as _;

    #[test]
    fn zero_weights_output_final_bias() {
        let mut m = MlpModel::new(MlpConfig::default(), 5).unwrap();
        m.params.set_zero();
        m.params.layers[3].b.set(0, 0, 4.25);
        let mut rng = seeded_rng(0);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0, 4.0, 5.0], Mode::Eval, &mut rng).unwrap(), 4.25);
        assert!(m.forward(&[1.0], Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn eval_deterministic() {
        let m = MlpModel::new(MlpConfig::default(), 3).unwrap();
        let a = m.forward(&[0.1, 0.2, 0.3], Mode::Eval, &mut seeded_rng(1)).unwrap();
        let b = m.forward(&[0.1, 0.2, 0.3], Mode::Eval, &mut seeded_rng(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_check() {
        for seed in 0..3 {
            let cfg = MlpConfig {
                hidden: [7, 6, 5],
                seed,
                ..MlpConfig::default()
            };
            let mut m = MlpModel::new(cfg, 4).unwrap();
            jitter_params(&mut m.params, seed);
            let mut rng = seeded_rng(100 + seed);
            let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let ys: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let mut drng = seeded_rng(seed);
            let mut rec = Dropout::Record(&mut drng, Vec::new());
            m.loss_grad_rows(&rows, &ys, &mut rec);
            let Dropout::Replay(tape, _) = rec.into_replay() else { unreachable!() };
            let f = |p: &MlpParams| {
                let mm = MlpModel {
                    config: m.config.clone(),
                    params: p.clone(),
                };
                mm.loss_grad_rows(&rows, &ys, &mut Dropout::Replay(tape.clone(), 0))
            };
            let err = grad_check(f, &m.params, 1e-5);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
