//! Evaluation metrics.

use crate::error::{ensure_finite, Error, Result};

fn check_pair(a: &[f64], b: &[f64], allow_empty: bool) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() && !allow_empty {
        return Err(Error::Dimension("metric needs at least one observation".into()));
    }
    ensure_finite("first argument", a)?;
    ensure_finite("second argument", b)
}

/// Mean absolute prediction error, `(1/n) Σ |yᵢ − ŷᵢ|`.
pub fn mean_absolute_prediction_error(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, false)?;
    let total: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / y.len() as f64)
}

/// `‖β̂ − β*‖₁`.
pub fn l1_estimation_error(beta_hat: &[f64], beta_star: &[f64]) -> Result<f64> {
    check_pair(beta_hat, beta_star, true)?;
    Ok(beta_hat.iter().zip(beta_star).map(|(a, b)| (a - b).abs()).sum())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, false)?;
    let ss: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y.len() as f64).sqrt())
}
