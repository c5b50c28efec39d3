use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geograph::SpatialGraph;
use crate::model::{NeuralRegressor, NodeRegressor};
use crate::nn::{glorot_uniform, zeros_like, DenseLayer, Dropout, Mode, ParamSet};
use crate::tensor::Tensor2;
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub channels: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            kernel: 3,
            hidden: 32,
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Two same-padded stride-1 convolutions over the feature vector (read as a
/// one-channel sequence), dropout, then two dense layers.
///
/// Convolution weights are stored as `[out_channels × in_channels·kernel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnParams {
    pub conv1_w: Tensor2,
    pub conv1_b: Tensor2,
    pub conv2_w: Tensor2,
    pub conv2_b: Tensor2,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

impl ParamSet for CnnParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        vec![
            ("conv1.w".into(), &self.conv1_w),
            ("conv1.b".into(), &self.conv1_b),
            ("conv2.w".into(), &self.conv2_w),
            ("conv2.b".into(), &self.conv2_b),
            ("fc1.w".into(), &self.fc1.w),
            ("fc1.b".into(), &self.fc1.b),
            ("fc2.w".into(), &self.fc2.w),
            ("fc2.b".into(), &self.fc2.b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1.w,
            &mut self.fc1.b,
            &mut self.fc2.w,
            &mut self.fc2.b,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub params: CnnParams,
    pub n_features: usize,
}

/// `[channels][len]` activations stored flat, channel-major.
fn conv_forward(x: &[f64], in_ch: usize, len: usize, w: &Tensor2, b: &Tensor2, k: usize) -> Vec<f64> {
    let out_ch = w.rows();
    let pad = k / 2;
    let mut y = vec![0.0; out_ch * len];
    for o in 0..out_ch {
        let wr = w.row(o);
        for i in 0..len {
            let mut acc = b.data()[o];
            for c in 0..in_ch {
                for j in 0..k {
                    let src = i + j;
                    if src < pad || src - pad >= len {
                        continue;
                    }
                    acc += wr[c * k + j] * x[c * len + src - pad];
                }
            }
            y[o * len + i] = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    in_ch: usize,
    len: usize,
    w: &Tensor2,
    k: usize,
    dy: &[f64],
    gw: &mut Tensor2,
    gb: &mut Tensor2,
    dx: Option<&mut [f64]>,
) {
    let out_ch = w.rows();
    let pad = k / 2;
    let mut dx = dx;
    for o in 0..out_ch {
        for i in 0..len {
            let g = dy[o * len + i];
            if g == 0.0 {
                continue;
            }
            gb.data_mut()[o] += g;
            for c in 0..in_ch {
                for j in 0..k {
                    let src = i + j;
                    if src < pad || src - pad >= len {
                        continue;
                    }
                    let xi = c * len + src - pad;
                    let widx = o * w.cols() + c * k + j;
                    gw.data_mut()[widx] += g * x[xi];
                    if let Some(dx) = dx.as_deref_mut() {
                        dx[xi] += g * w.data()[widx];
                    }
                }
            }
        }
    }
}

struct CnnCache {
    x: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
    mask: Option<Vec<f64>>,
    flat: Vec<f64>,
    h: Vec<f64>,
}

impl CnnModel {
    pub fn new(config: CnnConfig, n_features: usize) -> Result<Self> {
        if config.kernel == 0 || config.kernel > n_features {
            return Err(Error::InvalidArgument(format!(
                "kernel {} must lie in 1..={n_features}",
                config.kernel
            )));
        }
        if config.channels == 0 || config.hidden == 0 || !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!("invalid CNN config {config:?}")));
        }
        let mut rng = seeded_rng(config.seed);
        let (ch, k) = (config.channels, config.kernel);
        let params = CnnParams {
            conv1_w: glorot_uniform(ch, k, &mut rng),
            conv1_b: Tensor2::zeros(1, ch),
            conv2_w: glorot_uniform(ch, ch * k, &mut rng),
            conv2_b: Tensor2::zeros(1, ch),
            fc1: DenseLayer::new(ch * n_features, config.hidden, &mut rng),
            fc2: DenseLayer::new(config.hidden, 1, &mut rng),
        };
        Ok(Self {
            config,
            params,
            n_features,
        })
    }

    fn forward_cached(&self, x: &[f64], drop: &mut Dropout) -> (f64, CnnCache) {
        let p = &self.params;
        let (ch, k, len) = (self.config.channels, self.config.kernel, self.n_features);
        let mut r1 = conv_forward(x, 1, len, &p.conv1_w, &p.conv1_b, k);
        r1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut r2 = conv_forward(&r1, ch, len, &p.conv2_w, &p.conv2_b, k);
        r2.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut flat = r2.clone();
        let mask = drop.apply(self.config.dropout, &mut flat);
        let mut h = p.fc1.forward_vec(&flat);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let y = p.fc2.forward_vec(&h)[0];
        (
            y,
            CnnCache {
                x: x.to_vec(),
                r1,
                r2,
                mask,
                flat,
                h,
            },
        )
    }

    fn backward(&self, c: &CnnCache, dy: f64, g: &mut CnnParams) {
        let p = &self.params;
        let (ch, k, len) = (self.config.channels, self.config.kernel, self.n_features);
        let mut dh = vec![0.0; c.h.len()];
        p.fc2.backward_vec(&c.h, &[dy], &mut g.fc2, Some(&mut dh));
        dh.iter_mut().zip(&c.h).for_each(|(d, &h)| if h <= 0.0 { *d = 0.0 });
        let mut dflat = vec![0.0; c.flat.len()];
        p.fc1.backward_vec(&c.flat, &dh, &mut g.fc1, Some(&mut dflat));
        if let Some(m) = &c.mask {
            dflat.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        dflat.iter_mut().zip(&c.r2).for_each(|(d, &r)| if r <= 0.0 { *d = 0.0 });
        let mut dr1 = vec![0.0; c.r1.len()];
        conv_backward(&c.r1, ch, len, &p.conv2_w, k, &dflat, &mut g.conv2_w, &mut g.conv2_b, Some(&mut dr1));
        dr1.iter_mut().zip(&c.r1).for_each(|(d, &r)| if r <= 0.0 { *d = 0.0 });
        conv_backward(&c.x, 1, len, &p.conv1_w, k, &dr1, &mut g.conv1_w, &mut g.conv1_b, None);
    }

    pub fn forward(&self, x: &[f64], mode: Mode, rng: &mut Rng) -> Result<f64> {
        self.check_width(x.len())?;
        let mut drop = match mode {
            Mode::Train => Dropout::Train(rng),
            Mode::Eval => Dropout::Eval,
        };
        Ok(self.forward_cached(x, &mut drop).0)
    }

    pub fn loss_grad_rows(&self, rows: &[&[f64]], targets: &[f64], drop: &mut Dropout) -> (f64, CnnParams) {
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
        if d != self.n_features {
            return Err(Error::Shape(format!("CNN expects {} features, got {d}", self.n_features)));
        }
        Ok(())
    }
}

pub fn cnn_forward(model: &CnnModel, features: &[f64], mode: Mode, rng: &mut Rng) -> Result<f64> {
    model.forward(features, mode, rng)
}

impl NodeRegressor for CnnModel {
    fn predict_node(&self, _g: &SpatialGraph, feats: &Tensor2, node: usize, rng: &mut Rng) -> Result<f64> {
        self.forward(feats.row(node), Mode::Eval, rng)
    }
}

impl NeuralRegressor for CnnModel {
    type Params = CnnParams;

    fn params(&self) -> &CnnParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut CnnParams {
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
    ) -> Result<(f64, CnnParams)> {
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
        let mut m = CnnModel::new(CnnConfig::default(), 6).unwrap();
        m.params.set_zero();
        m.params.fc2.b.set(0, 0, -1.5);
        assert_eq!(m.forward(&[1.0; 6], Mode::Eval, &mut seeded_rng(0)).unwrap(), -1.5);
    }

    #[test]
    fn kernel_must_fit() {
        let cfg = CnnConfig {
            kernel: 7,
            ..CnnConfig::default()
        };
        assert!(CnnModel::new(cfg, 6).is_err());
    }

    #[test]
    fn identity_kernel_convolution() {
        // kernel [0, 1, 0] copies the input; [1, 0, 0] shifts it right with zero padding
        let x = [1.0, 2.0, 3.0];
        let b = Tensor2::zeros(1, 1);
        let id = Tensor2::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(conv_forward(&x, 1, 3, &id, &b, 3), vec![1.0, 2.0, 3.0]);
        let shift = Tensor2::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(conv_forward(&x, 1, 3, &shift, &b, 3), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn gradient_check() {
        for seed in 0..3 {
            let cfg = CnnConfig {
                channels: 3,
                hidden: 5,
                seed,
                ..CnnConfig::default()
            };
            let mut m = CnnModel::new(cfg, 6).unwrap();
            jitter_params(&mut m.params, seed);
            let mut rng = seeded_rng(200 + seed);
            let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let ys: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let mut drng = seeded_rng(seed);
            let mut rec = Dropout::Record(&mut drng, Vec::new());
            m.loss_grad_rows(&rows, &ys, &mut rec);
            let Dropout::Replay(tape, _) = rec.into_replay() else { unreachable!() };
            let f = |p: &CnnParams| {
                let mm = CnnModel {
                    params: p.clone(),
                    ..m.clone()
                };
                mm.loss_grad_rows(&rows, &ys, &mut Dropout::Replay(tape.clone(), 0))
            };
            let err = grad_check(f, &m.params, 1e-5);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
