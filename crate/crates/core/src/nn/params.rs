use crate::tensor::Tensor2;

/// A fixed, ordered collection of named trainable tensors.
///
/// Gradients are represented by a value of the same type, so optimizers and
/// gradient checks can walk parameters and gradients in lock-step.
pub trait ParamSet: Clone {
    fn named_tensors(&self) -> Vec<(String, &Tensor2)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor2>;

    fn tensors(&self) -> Vec<&Tensor2> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    fn set_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += alpha * other`
    fn add_scaled(&mut self, other: &Self, alpha: f64) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.add_scaled(s, alpha);
        }
    }

    fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

impl ParamSet for Tensor2 {
    fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        vec![("theta".to_string(), self)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![self]
    }
}

pub fn zeros_like<P: ParamSet>(p: &P) -> P {
    let mut z = p.clone();
    z.set_zero();
    z
}

pub fn flatten<P: ParamSet>(p: &P) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.num_params());
    for t in p.tensors() {
        out.extend_from_slice(t.data());
    }
    out
}

/// Overwrites every parameter from a flat vector in `flatten` order.
pub fn assign_flat<P: ParamSet>(p: &mut P, flat: &[f64]) {
    let mut offset = 0;
    for t in p.tensors_mut() {
        let n = t.data().len();
        t.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, flat.len(), "flat vector length mismatch");
}
