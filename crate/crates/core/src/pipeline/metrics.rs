use crate::error::{Error, Result};

fn check_pair(pred: &[f64], actual: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::Shape(format!(
            "prediction length {} vs actual length {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.len() < min_len {
        return Err(Error::Empty(if min_len > 1 {
            "gradient RMSE needs at least two points"
        } else {
            "metric of an empty series"
        }));
    }
    Ok(())
}

/// Root mean squared error in the units of the inputs.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual, 1)?;
    let ss: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// RMSE divided by the mean of the actual series.
pub fn nrmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    let r = rmse(pred, actual)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    if mean <= 0.0 || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!("NRMSE needs a positive actual mean, got {mean}")));
    }
    Ok(r / mean)
}

/// RMSE between first differences. Blind to constant offsets.
pub fn grad_rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual, 2)?;
    let dp: Vec<f64> = pred.windows(2).map(|w| w[1] - w[0]).collect();
    let da: Vec<f64> = actual.windows(2).map(|w| w[1] - w[0]).collect();
    rmse(&dp, &da)
}

/// Percentage reduction from `base` to `new`.
pub fn improvement(base: f64, new: f64) -> Result<f64> {
    if base <= 0.0 || !base.is_finite() {
        return Err(Error::InvalidArgument(format!("improvement needs a positive base, got {base}")));
    }
    Ok((base - new) / base * 100.0)
}
