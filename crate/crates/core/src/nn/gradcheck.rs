use super::params::{assign_flat, flatten, ParamSet};

/// Compares a reverse-mode gradient against central finite differences,
/// coordinate by coordinate.
///
/// `f` returns the scalar loss and its analytic gradient. The result is the
/// maximum relative error, with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<P, F>(f: F, params: &P, h: f64) -> f64
where
    P: ParamSet,
    F: Fn(&P) -> (f64, P),
{
    let (_, analytic) = f(params);
    let analytic = flatten(&analytic);
    let base = flatten(params);
    let mut probe = params.clone();
    let numeric = |i: usize, probe: &mut P| {
        let mut x = base.clone();
        x[i] = base[i] + h;
        assign_flat(probe, &x);
        let plus = f(probe).0;
        x[i] = base[i] - h;
        assign_flat(probe, &x);
        let minus = f(probe).0;
        (plus - minus) / (2.0 * h)
    };
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let n = numeric(i, &mut probe);
        let denom = a.abs().max(n.abs()).max(1e-8);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

/// Gradient check for a plain function of a flat parameter vector.
pub fn grad_check_flat<F, G>(f: F, grad: G, theta: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad(theta);
    let mut x = theta.to_vec();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        x[i] = theta[i] + h;
        let plus = f(&x);
        x[i] = theta[i] - h;
        let minus = f(&x);
        x[i] = theta[i];
        let n = (plus - minus) / (2.0 * h);
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mse_loss, relu, DenseLayer};
    use crate::seeded_rng;
    use rand::Rng as _;

    #[test]
    fn quadratic() {
        let err = grad_check_flat(|t| t[0] * t[0], |t| vec![2.0 * t[0]], &[3.0], 1e-5);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn dense_relu_mse() {
        let mut rng = seeded_rng(0);
        let layer = DenseLayer::new(4, 3, &mut rng);
        let x: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..5 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |l: &DenseLayer| {
            let mut grad = l.clone();
            grad.w.fill(0.0);
            grad.b.fill(0.0);
            let mut pre = Vec::new();
            let mut out = Vec::new();
            for xi in &x {
                let z = l.forward_vec(xi);
                out.extend(z.iter().map(|&v| relu(v)));
                pre.push(z);
            }
            let (loss, d) = mse_loss(&out, &y).unwrap();
            for (i, xi) in x.iter().enumerate() {
                let dz: Vec<f64> = (0..3)
                    .map(|j| if pre[i][j] > 0.0 { d[i * 3 + j] } else { 0.0 })
                    .collect();
                l.backward_vec(xi, &dz, &mut grad, None);
            }
            (loss, grad)
        };
        let err = grad_check(f, &layer, 1e-5);
        assert!(err < 1e-4, "{err}");
    }
}
