use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::TestReport;
use crate::error::{arg_err, Error, Result};
use crate::math::{quantile_sorted, sorted_copy};

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form converges fast for small lambda.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=20 {
            let odd = (2 * k - 1) as f64;
            let term = (c * odd * odd).exp();
            s += term;
            if term < 1e-18 {
                break;
            }
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Largest gap between the two empirical CDFs.
fn ks_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    let (m, n) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / m - j as f64 / n).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// `Q(sqrt(mn / (m + n)) * D)`.
pub fn ks_test(x: &[f64], y: &[f64]) -> Result<TestReport> {
    if x.is_empty() || y.is_empty() {
        return Err(arg_err("KS test needs two non-empty samples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(arg_err("KS test samples must be finite"));
    }
    let xs = sorted_copy(x);
    let ys = sorted_copy(y);
    let d = ks_statistic(&xs, &ys);
    let (m, n) = (x.len() as f64, y.len() as f64);
    let en = (m * n / (m + n)).sqrt();
    Ok(TestReport::analytic("ks", d, kolmogorov_sf(en * d)))
}

const ES_POINTS: [f64; 2] = [0.4, 0.8];

/// Epps-Singleton test: compares empirical characteristic functions at
/// `t = (0.4, 0.8) / s` where `s` is the pooled semi-interquartile range.
///
/// The chi-square degrees of freedom are the numerical rank of the
/// estimated covariance (4 for continuous data, fewer for discrete data
/// whose characteristic-function features are collinear).
pub fn es_test(x: &[f64], y: &[f64]) -> Result<TestReport> {
    if x.len() < 5 || y.len() < 5 {
        return Err(arg_err("Epps-Singleton test needs at least 5 observations per sample"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(arg_err("Epps-Singleton samples must be finite"));
    }
    let pooled = sorted_copy(&[x, y].concat());
    let iqr = quantile_sorted(&pooled, 0.75) - quantile_sorted(&pooled, 0.25);
    if iqr <= 0.0 {
        return Err(Error::DegenerateScale(
            "pooled sample has zero interquartile range".into(),
        ));
    }
    let sigma = iqr / 2.0;
    let ts: Vec<f64> = ES_POINTS.iter().map(|t| t / sigma).collect();
    let k = 2 * ts.len();

    let features = |v: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let n = v.len() as f64;
        let g = DMatrix::from_fn(v.len(), k, |i, j| {
            let t = ts[j % ts.len()];
            if j < ts.len() {
                (t * v[i]).cos()
            } else {
                (t * v[i]).sin()
            }
        });
        let mean = DVector::from_fn(k, |j, _| g.column(j).sum() / n);
        let mut centered = g;
        for j in 0..k {
            let mj = mean[j];
            centered.column_mut(j).add_scalar_mut(-mj);
        }
        let cov = centered.transpose() * &centered / n;
        (mean, cov)
    };
    let (mx, cx) = features(x);
    let (my, cy) = features(y);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let n = nx + ny;
    let cov = cx * (n / nx) + cy * (n / ny);

    let eig = SymmetricEigen::new(cov);
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = max_eig * 1e-10;
    let diff = mx - my;
    let projected = eig.eigenvectors.transpose() * &diff;
    let mut w = 0.0;
    let mut rank = 0usize;
    for (lambda, p) in eig.eigenvalues.iter().zip(projected.iter()) {
        if *lambda > cutoff {
            w += p * p / lambda;
            rank += 1;
        }
    }
    if rank == 0 {
        return Ok(TestReport::analytic("es", 0.0, 1.0));
    }
    w *= n;
    if x.len().min(y.len()) < 25 {
        w /= 1.0 + n.powf(-0.45) + 10.1 * (nx.powf(-1.7) + ny.powf(-1.7));
    }
    let chi = ChiSquared::new(rank as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(TestReport::analytic("es", w, chi.sf(w)))
}
