use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{mat_vec_acc, outer_acc, vec_mat_acc, Tensor2};
use crate::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Glorot/Xavier uniform initialization in `±√(6/(fan_in+fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Tensor2 {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("shape")
}

/// Fully connected layer `y = x·W + b` with `W: [in × out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Tensor2,
    pub b: Tensor2,
}

impl DenseLayer {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            w: glorot_uniform(fan_in, fan_out, rng),
            b: Tensor2::zeros(1, fan_out),
        }
    }

    pub fn from_parts(w: Tensor2, b: Vec<f64>) -> Result<Self> {
        if w.cols() != b.len() {
            return Err(Error::Shape(format!(
                "bias of length {} for a layer with {} outputs",
                b.len(),
                w.cols()
            )));
        }
        Ok(Self {
            w,
            b: Tensor2::row_vector(&b),
        })
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != self.fan_in() {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.fan_in(),
                x.cols()
            )));
        }
        let mut y = Tensor2::zeros(x.rows(), self.fan_out());
        for r in 0..x.rows() {
            let out = y.row_mut(r);
            out.copy_from_slice(self.b.data());
            vec_mat_acc(x.row(r), &self.w, out);
        }
        Ok(y)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.data().to_vec();
        vec_mat_acc(x, &self.w, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grad` and, when requested, the
    /// input gradient into `dx`.
    pub fn backward_vec(&self, x: &[f64], dy: &[f64], grad: &mut DenseLayer, dx: Option<&mut [f64]>) {
        outer_acc(x, dy, &mut grad.w);
        for (g, d) in grad.b.data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            mat_vec_acc(&self.w, dy, dx);
        }
    }
}

impl ParamSet for DenseLayer {
    fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout on a single vector.
pub fn dropout(x: &[f64], rate: f64, mode: Mode, rng: &mut Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    let mut ctx = match mode {
        Mode::Train => Dropout::Train(rng),
        Mode::Eval => Dropout::Eval,
    };
    ctx.apply(rate, &mut out);
    out
}

/// Source of dropout masks for a forward pass.
///
/// `Record` samples like `Train` but keeps every mask, and `Replay` feeds a
/// recorded sequence back in the same order, which freezes the stochastic
/// part of a forward pass for gradient checks.
pub enum Dropout<'a> {
    Eval,
    Train(&'a mut Rng),
    Record(&'a mut Rng, Vec<Vec<f64>>),
    Replay(Vec<Vec<f64>>, usize),
}

impl Dropout<'_> {
    pub fn is_eval(&self) -> bool {
        matches!(self, Dropout::Eval)
    }

    /// Applies dropout in place. Returns the multiplicative mask that was used,
    /// or `None` for the identity.
    pub fn apply(&mut self, rate: f64, x: &mut [f64]) -> Option<Vec<f64>> {
        let mask = match self {
            Dropout::Eval => return None,
            Dropout::Train(rng) => sample_mask(rate, x.len(), rng),
            Dropout::Record(rng, tape) => {
                let m = sample_mask(rate, x.len(), rng);
                tape.push(m.clone());
                m
            }
            Dropout::Replay(tape, cursor) => {
                let m = tape
                    .get(*cursor)
                    .cloned()
                    .expect("dropout replay tape exhausted");
                *cursor += 1;
                assert_eq!(m.len(), x.len(), "dropout replay mask length");
                m
            }
        };
        for (v, m) in x.iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    }

    /// Converts a recording context into a replaying one.
    pub fn into_replay(self) -> Dropout<'static> {
        match self {
            Dropout::Record(_, tape) => Dropout::Replay(tape, 0),
            Dropout::Replay(tape, _) => Dropout::Replay(tape, 0),
            Dropout::Eval => Dropout::Eval,
            Dropout::Train(_) => panic!("cannot replay an unrecorded dropout context"),
        }
    }
}

fn sample_mask(rate: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], actual: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != actual.len() {
        return Err(Error::Shape(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse of empty series"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| {
            let d = p - a;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}
