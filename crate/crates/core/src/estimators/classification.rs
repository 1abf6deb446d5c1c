//! Propensity classifiers. Every model returns `P(T = 1 | x)` clipped to
//! `[1e-6, 1 - 1e-6]`.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};

use super::features::{solve_symmetric, Standardizer};
use super::nonparametric::{NeighborAverage, RegressionTree, TreeParams};
use super::regression::{check_xy, tuning_split};
use super::spec::{ClassifierFamily, ClassifierSpec, Family};
use crate::error::{arg_err, shape_err, Result};
use crate::math::{sigmoid, softplus};

pub const PROBABILITY_CLIP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-6;
const NEWTON_MAX_ITER: usize = 200;
const PROX_MAX_ITER: usize = 50_000;
const UNREGULARIZED_LAMBDA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct Gaussian {
    mean: Vec<f64>,
    /// Inverse covariance (QDA) or per-feature variances (naive Bayes).
    precision: DMatrix<f64>,
    log_det: f64,
    log_prior: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Logistic { coef: Vec<f64>, intercept: f64 },
    Knn(NeighborAverage),
    Tree(RegressionTree),
    Discriminant([Gaussian; 2]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedClassifier {
    spec: ClassifierSpec,
    standardizer: Option<Standardizer>,
    model: Model,
    pub warnings: Vec<String>,
}

fn log_loss(t: &[f64], p: &[f64]) -> f64 {
    t.iter()
        .zip(p)
        .map(|(t, p)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum::<f64>()
        / t.len() as f64
}

impl ClassifierSpec {
    pub fn fit(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<FittedClassifier> {
        check_xy(x, t)?;
        if t.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(arg_err("treatment labels must be 0 or 1"));
        }
        let treated = t.iter().filter(|v| **v == 1.0).count();
        if treated == 0 || treated == t.len() {
            return Err(arg_err("classifier needs both classes present"));
        }
        self.validate()?;
        if self.tune {
            let (chosen, note) = self.tuned(x, t)?;
            let mut fitted = chosen.fit_once(x, t)?;
            fitted.warnings.extend(note);
            return Ok(fitted);
        }
        self.fit_once(x, t)
    }

    fn tuned(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<(ClassifierSpec, Option<String>)> {
        let mut base = self.clone();
        base.tune = false;
        let Some((name, values)) = self.family.sweep() else {
            return Ok((base, None));
        };
        if t.len() < 5 {
            return Ok((base, Some("too few rows to tune; defaults kept".into())));
        }
        let (tr, va) = tuning_split(t.len());
        let xt = x.select(Axis(0), &tr);
        let tt: Vec<f64> = tr.iter().map(|&i| t[i]).collect();
        let xv = x.select(Axis(0), &va);
        let tv: Vec<f64> = va.iter().map(|&i| t[i]).collect();
        let mut best: Option<(f64, f64)> = None;
        for v in values {
            let mut cand = base.clone();
            cand.set(name, v)?;
            // A split missing one class cannot be scored; skip the candidate.
            let Ok(fitted) = cand.fit_once(xt.view(), &tt) else {
                continue;
            };
            let loss = log_loss(&tv, &fitted.predict_proba(xv.view())?);
            if loss.is_finite() && best.is_none_or(|(_, b)| loss < b) {
                best = Some((v, loss));
            }
        }
        match best {
            Some((v, _)) => {
                base.set(name, v)?;
                Ok((base, Some(format!("tuned {name} = {v}"))))
            }
            None => Ok((base, Some("no tuning candidate could be fitted; defaults kept".into()))),
        }
    }

    fn fit_once(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<FittedClassifier> {
        use ClassifierFamily::*;
        let standardizer = self.standardize.then(|| Standardizer::fit(x));
        let z = match &standardizer {
            Some(s) => s.transform(x)?,
            None => x.to_owned(),
        };
        let mut warnings = Vec::new();
        let int = |name: &str| self.param(name).map(|v| v as usize);
        let model = match self.family {
            LogisticL2 | LogisticUnregularized => {
                let lambda = match self.family {
                    LogisticL2 => self.param("lambda").unwrap_or(1e-3),
                    _ => UNREGULARIZED_LAMBDA,
                };
                let (coef, intercept) = logistic_newton(&z, t, lambda, &mut warnings);
                Model::Logistic { coef, intercept }
            }
            LogisticL1 => {
                let (coef, intercept) = logistic_proximal(&z, t, self.param("lambda").unwrap_or(1e-3), &mut warnings);
                Model::Logistic { coef, intercept }
            }
            KnnClf => Model::Knn(NeighborAverage::fit(z.view(), t, int("k").unwrap_or(5))?),
            DecisionTreeClf => Model::Tree(RegressionTree::fit(
                z.view(),
                t,
                TreeParams {
                    max_depth: int("max_depth"),
                    min_leaf: int("min_leaf").unwrap_or(5),
                },
            )?),
            GaussianNb => Model::Discriminant(naive_bayes(&z, t, self.param("var_smoothing").unwrap_or(1e-9))?),
            Qda => Model::Discriminant(qda(&z, t, self.param("reg").unwrap_or(0.0), &mut warnings)?),
        };
        Ok(FittedClassifier {
            spec: self.clone(),
            standardizer,
            model,
            warnings,
        })
    }
}

/// Mean log-loss plus `lambda / 2 ||b||^2` (intercept unpenalized), its
/// gradient and the linear predictors.
fn logistic_objective(x: &DMatrix<f64>, t: &[f64], beta: &DVector<f64>, lambda: f64) -> (f64, DVector<f64>, Vec<f64>) {
    let n = t.len() as f64;
    let eta = x * beta;
    let mut loss = 0.0;
    let mut resid = DVector::zeros(t.len());
    for i in 0..t.len() {
        loss += softplus(eta[i]) - t[i] * eta[i];
        resid[i] = sigmoid(eta[i]) - t[i];
    }
    let mut grad = x.transpose() * resid / n;
    let mut penalty = 0.0;
    for j in 1..beta.len() {
        grad[j] += lambda * beta[j];
        penalty += beta[j] * beta[j];
    }
    (loss / n + 0.5 * lambda * penalty, grad, eta.iter().copied().collect())
}

fn with_intercept(z: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), z.ncols() + 1, |i, j| if j == 0 { 1.0 } else { z[[i, j - 1]] })
}

fn split_beta(beta: &DVector<f64>) -> (Vec<f64>, f64) {
    (beta.iter().skip(1).copied().collect(), beta[0])
}

/// Damped Newton (IRLS) with backtracking on the objective.
fn logistic_newton(z: &Array2<f64>, t: &[f64], lambda: f64, warnings: &mut Vec<String>) -> (Vec<f64>, f64) {
    let x = with_intercept(z);
    let n = t.len() as f64;
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let (mut f, mut grad, mut eta) = logistic_objective(&x, t, &beta, lambda);
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        if grad.norm() <= GRAD_TOL {
            converged = true;
            break;
        }
        let mut h = DMatrix::zeros(p, p);
        for (i, row) in x.row_iter().enumerate() {
            let s = sigmoid(eta[i]);
            let w = s * (1.0 - s) / n;
            h += row.transpose() * row * w;
        }
        for j in 1..p {
            h[(j, j)] += lambda;
        }
        let step = match Cholesky::new(h.clone()) {
            Some(c) => c.solve(&grad),
            None => solve_symmetric(h, &grad).0,
        };
        let slope = grad.dot(&step);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &beta - &step * scale;
            let (fc, gc, ec) = logistic_objective(&x, t, &cand, lambda);
            if fc <= f - 1e-4 * scale * slope {
                beta = cand;
                f = fc;
                grad = gc;
                eta = ec;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged && grad.norm() <= GRAD_TOL {
        converged = true;
    }
    if !converged {
        warnings.push(format!("logistic solver stopped with gradient norm {:.3e}", grad.norm()));
    }
    split_beta(&beta)
}

/// Accelerated proximal gradient for mean log-loss plus `lambda ||b||_1`,
/// stopped when the gradient mapping is below tolerance.
fn logistic_proximal(z: &Array2<f64>, t: &[f64], lambda: f64, warnings: &mut Vec<String>) -> (Vec<f64>, f64) {
    let x = with_intercept(z);
    let p = x.ncols();
    let smooth = |b: &DVector<f64>| {
        let (f, g, _) = logistic_objective(&x, t, b, 0.0);
        (f, g)
    };
    let prox = |v: DVector<f64>, step: f64| {
        DVector::from_iterator(
            p,
            v.iter().enumerate().map(|(j, &x)| {
                if j == 0 {
                    x
                } else {
                    x.signum() * (x.abs() - step * lambda).max(0.0)
                }
            }),
        )
    };
    let mut beta = DVector::zeros(p);
    let mut momentum = beta.clone();
    let mut k = 1.0f64;
    let mut lip = 1.0f64;
    let mut mapping = f64::INFINITY;
    for _ in 0..PROX_MAX_ITER {
        let (fy, gy) = smooth(&momentum);
        let next = loop {
            let cand = prox(&momentum - &gy * (1.0 / lip), 1.0 / lip);
            let d = &cand - &momentum;
            let (fc, _) = smooth(&cand);
            if fc <= fy + gy.dot(&d) + 0.5 * lip * d.norm_squared() + 1e-15 {
                break cand;
            }
            lip *= 2.0;
        };
        // Gradient mapping at the new iterate measures stationarity.
        let (_, gn) = smooth(&next);
        mapping = ((&next - prox(&next - &gn * (1.0 / lip), 1.0 / lip)) * lip).norm();
        let k_next = 0.5 * (1.0 + (1.0 + 4.0 * k * k).sqrt());
        let restart = (&momentum - &next).dot(&(&next - &beta)) > 0.0;
        momentum = if restart {
            k = 1.0;
            next.clone()
        } else {
            let m = &next + (&next - &beta) * ((k - 1.0) / k_next);
            k = k_next;
            m
        };
        beta = next;
        if mapping <= GRAD_TOL {
            break;
        }
    }
    if mapping > GRAD_TOL {
        warnings.push(format!("L1 logistic solver stopped with gradient mapping {mapping:.3e}"));
    }
    split_beta(&beta)
}

fn class_rows(z: &Array2<f64>, t: &[f64], class: f64) -> Array2<f64> {
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == class).collect();
    z.select(Axis(0), &idx)
}

fn column_means(x: &Array2<f64>) -> Vec<f64> {
    x.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}

fn naive_bayes(z: &Array2<f64>, t: &[f64], smoothing: f64) -> Result<[Gaussian; 2]> {
    let n = t.len() as f64;
    let max_var = z
        .columns()
        .into_iter()
        .map(|c| {
            let m = c.sum() / n;
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .fold(0.0f64, f64::max);
    let eps = smoothing * max_var;
    let fit = |class: f64| -> Result<Gaussian> {
        let rows = class_rows(z, t, class);
        let k = rows.nrows() as f64;
        let mean = column_means(&rows);
        let var: Vec<f64> = rows
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k + eps)
            .collect();
        if var.iter().any(|v| *v <= 0.0) {
            return Err(arg_err("naive Bayes needs positive class variances; raise var_smoothing"));
        }
        Ok(Gaussian {
            log_det: var.iter().map(|v| v.ln()).sum(),
            precision: DMatrix::from_diagonal(&DVector::from_iterator(var.len(), var.iter().map(|v| 1.0 / v))),
            mean,
            log_prior: (k / n).ln(),
        })
    };
    Ok([fit(0.0)?, fit(1.0)?])
}

/// Class covariances are unbiased sample covariances shrunk as
/// `(1 - reg) S + reg I`.
fn qda(z: &Array2<f64>, t: &[f64], reg: f64, warnings: &mut Vec<String>) -> Result<[Gaussian; 2]> {
    let n = t.len() as f64;
    let p = z.ncols();
    let mut fit = |class: f64| -> Result<Gaussian> {
        let rows = class_rows(z, t, class);
        let k = rows.nrows();
        if k < 2 {
            return Err(arg_err("QDA needs at least two rows per class"));
        }
        let mean = column_means(&rows);
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for r in rows.rows() {
            let d = DVector::from_iterator(p, r.iter().zip(&mean).map(|(v, m)| v - m));
            cov += &d * d.transpose();
        }
        cov /= (k - 1) as f64;
        cov = cov * (1.0 - reg) + DMatrix::identity(p, p) * reg;
        let chol = match Cholesky::new(cov.clone()) {
            Some(c) => c,
            None => {
                let jitter = 1e-9 * (cov.trace() / p as f64).max(1e-12);
                warnings.push(format!("singular class covariance; added {jitter:.1e} to the diagonal"));
                Cholesky::new(cov + DMatrix::identity(p, p) * jitter)
                    .ok_or_else(|| arg_err("QDA class covariance is not positive definite"))?
            }
        };
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Gaussian {
            mean,
            precision: chol.inverse(),
            log_det,
            log_prior: (k as f64 / n).ln(),
        })
    };
    Ok([fit(0.0)?, fit(1.0)?])
}

impl Gaussian {
    /// Log prior plus log density, without the shared `-(p/2) ln 2 pi`.
    fn discriminant(&self, x: &[f64]) -> f64 {
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(v, m)| v - m));
        self.log_prior - 0.5 * self.log_det - 0.5 * d.dot(&(&self.precision * &d))
    }
}

impl FittedClassifier {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let z = match &self.standardizer {
            Some(s) => s.transform(x)?,
            None => x.to_owned(),
        };
        let raw = match &self.model {
            Model::Logistic { coef, intercept } => {
                if z.ncols() != coef.len() {
                    return Err(shape_err("query dimension differs from training data"));
                }
                z.rows()
                    .into_iter()
                    .map(|r| sigmoid(intercept + r.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>()))
                    .collect()
            }
            Model::Knn(m) => m.predict(z.view())?,
            Model::Tree(t) => t.predict(z.view())?,
            Model::Discriminant(g) => {
                if z.ncols() != g[0].mean.len() {
                    return Err(shape_err("query dimension differs from training data"));
                }
                z.rows()
                    .into_iter()
                    .map(|r| {
                        let r = r.to_vec();
                        sigmoid(g[1].discriminant(&r) - g[0].discriminant(&r))
                    })
                    .collect::<Vec<f64>>()
            }
        };
        Ok(raw
            .into_iter()
            .map(|p: f64| p.clamp(PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP))
            .collect())
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn summary(&self) -> String {
        let detail = match &self.model {
            Model::Logistic { coef, .. } => {
                let nz = coef.iter().filter(|c| **c != 0.0).count();
                format!("{nz}/{} non-zero coefficients", coef.len())
            }
            Model::Knn(_) => "neighbour vote".to_string(),
            Model::Tree(t) => format!("depth {}", t.depth()),
            Model::Discriminant(_) => "class-conditional Gaussians".to_string(),
        };
        format!("{}: {detail}", self.spec.describe())
    }
}
