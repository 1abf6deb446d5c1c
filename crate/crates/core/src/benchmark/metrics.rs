use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};

/// Root mean squared difference between estimated and true IATEs.
pub fn pehe(iate_hat: &[f64], iate_true: &[f64]) -> Result<f64> {
    if iate_hat.len() != iate_true.len() {
        return Err(shape_err(format!(
            "{} estimated IATEs for {} true ones",
            iate_hat.len(),
            iate_true.len()
        )));
    }
    if iate_hat.is_empty() {
        return Err(arg_err("PEHE needs at least one unit"));
    }
    let sq: f64 = iate_hat.iter().zip(iate_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / iate_hat.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteMetrics {
    pub bias: f64,
    pub abs_bias: f64,
    pub std: f64,
    pub rmse: f64,
}

/// Bias, absolute bias, spread and RMSE of ATE estimates against their
/// truths.
///
/// `std` is the population standard deviation of the errors
/// `estimate - truth`, which equals that of the estimates when the truth is
/// constant. `rmse^2 = bias^2 + std^2` holds either way.
pub fn ate_metrics(estimates: &[f64], truths: &[f64]) -> Result<AteMetrics> {
    if estimates.len() != truths.len() {
        return Err(shape_err(format!("{} estimates for {} truths", estimates.len(), truths.len())));
    }
    if estimates.is_empty() {
        return Err(arg_err("metrics need at least one estimate"));
    }
    let n = estimates.len() as f64;
    let errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e - t).collect();
    let bias = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / n;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
    Ok(AteMetrics {
        bias,
        abs_bias: bias.abs(),
        std: var.sqrt(),
        rmse: mse.sqrt(),
    })
}
