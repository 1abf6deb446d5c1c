//! Outcome regressors: least squares with feature expansions, ridge,
//! lasso / elastic net by coordinate descent, RBF kernel ridge, kNN and
//! CART.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::features::{solve_symmetric, to_dmatrix, Expansion, Standardizer};
use super::nonparametric::{NeighborAverage, RegressionTree, TreeParams};
use super::spec::{Family, RegressorFamily, RegressorSpec};
use crate::error::{arg_err, shape_err, Result};
use crate::math::running_mean;
use crate::rng::sub_rng;

const CD_MAX_SWEEPS: usize = 10_000;
/// Duality-gap tolerance per sample, relative to `max(1, var(y))`.
const CD_GAP_TOL: f64 = 1e-6;
/// Seed of the internal 80/20 split used when tuning.
pub(crate) const TUNE_SEED: u64 = 0x7475_6e65;

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Linear {
        expansion: Expansion,
        coef: Vec<f64>,
        intercept: f64,
    },
    Kernel {
        train: Array2<f64>,
        dual: Vec<f64>,
        gamma: f64,
        intercept: f64,
    },
    Knn(NeighborAverage),
    Tree(RegressionTree),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedRegressor {
    spec: RegressorSpec,
    standardizer: Option<Standardizer>,
    model: Model,
    pub warnings: Vec<String>,
}

pub(crate) fn check_xy(x: ArrayView2<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(shape_err(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.nrows() == 0 {
        return Err(arg_err("cannot fit on zero rows"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(arg_err("training data must be finite"));
    }
    Ok(())
}

/// Seeded 80/20 split of `0..n` (both parts non-empty for `n >= 2`).
pub(crate) fn tuning_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut sub_rng(TUNE_SEED, n as u64));
    let n_train = ((0.8 * n as f64).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n_train);
    (idx, val)
}

fn center(z: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let means: Vec<f64> = z.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default();
    let mut c = z.clone();
    for (mut col, m) in c.columns_mut().into_iter().zip(&means) {
        col.mapv_inplace(|v| v - m);
    }
    (c, means)
}

impl RegressorSpec {
    pub fn fit(&self, x: ArrayView2<f64>, y: &[f64]) -> Result<FittedRegressor> {
        check_xy(x, y)?;
        self.validate()?;
        if self.tune {
            let (chosen, note) = self.tuned(x, y)?;
            let mut fitted = chosen.fit_once(x, y)?;
            fitted.warnings.extend(note);
            return Ok(fitted);
        }
        self.fit_once(x, y)
    }

    /// Spec with the swept hyperparameter set to the value with the lowest
    /// held-out squared error.
    fn tuned(&self, x: ArrayView2<f64>, y: &[f64]) -> Result<(RegressorSpec, Option<String>)> {
        let mut base = self.clone();
        base.tune = false;
        let Some((name, values)) = self.family.sweep() else {
            return Ok((base, None));
        };
        if y.len() < 5 {
            return Ok((base, Some("too few rows to tune; defaults kept".into())));
        }
        let (tr, va) = tuning_split(y.len());
        let xt = x.select(Axis(0), &tr);
        let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
        let xv = x.select(Axis(0), &va);
        let mut best: Option<(f64, f64)> = None;
        for v in values {
            let mut cand = base.clone();
            cand.set(name, v)?;
            let Ok(fitted) = cand.fit_once(xt.view(), &yt) else {
                continue;
            };
            let pred = fitted.predict(xv.view())?;
            let mse = va.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>() / va.len() as f64;
            if mse.is_finite() && best.is_none_or(|(_, b)| mse < b) {
                best = Some((v, mse));
            }
        }
        let (v, _) = best.ok_or_else(|| arg_err("no tuning candidate could be fitted"))?;
        base.set(name, v)?;
        Ok((base, Some(format!("tuned {name} = {v}"))))
    }

    fn fit_once(&self, x: ArrayView2<f64>, y: &[f64]) -> Result<FittedRegressor> {
        use RegressorFamily::*;
        let standardizer = self.standardize.then(|| Standardizer::fit(x));
        let z = match &standardizer {
            Some(s) => s.transform(x)?,
            None => x.to_owned(),
        };
        let mut warnings = Vec::new();
        let int = |name: &str| self.param(name).map(|v| v as usize);
        let model = match self.family {
            Ols | OlsInteract | OlsPoly2 | OlsPoly3 | Ridge | Lasso | ElasticNet => {
                let expansion = match self.family {
                    OlsInteract => Expansion::interact_first(z.ncols()),
                    OlsPoly2 => Expansion::polynomial(z.view(), 2),
                    OlsPoly3 => Expansion::polynomial(z.view(), 3),
                    _ => Expansion::identity(z.ncols()),
                };
                let features = expansion.apply(z.view())?;
                let (coef, intercept) = match self.family {
                    Lasso => coordinate_descent(&features, y, self.param("alpha").unwrap_or(0.01), 1.0, &mut warnings),
                    ElasticNet => coordinate_descent(
                        &features,
                        y,
                        self.param("alpha").unwrap_or(0.01),
                        self.param("l1_ratio").unwrap_or(0.5),
                        &mut warnings,
                    ),
                    Ridge => least_squares(&features, y, self.param("alpha").unwrap_or(1.0), &mut warnings),
                    _ => least_squares(&features, y, 0.0, &mut warnings),
                };
                Model::Linear {
                    expansion,
                    coef,
                    intercept,
                }
            }
            KernelRidgeRbf => {
                let gamma = self.param("gamma").unwrap_or(1.0 / z.ncols().max(1) as f64);
                let alpha = self.param("alpha").unwrap_or(1.0);
                let intercept = running_mean(y);
                let k = rbf_kernel(z.view(), z.view(), gamma);
                let n = y.len();
                let a = DMatrix::from_fn(n, n, |i, j| k[[i, j]] + if i == j { alpha } else { 0.0 });
                let b = DVector::from_iterator(n, y.iter().map(|v| v - intercept));
                let dual = match Cholesky::new(a.clone()) {
                    Some(c) => c.solve(&b),
                    None => solve_symmetric(a, &b).0,
                };
                Model::Kernel {
                    train: z,
                    dual: dual.iter().copied().collect(),
                    gamma,
                    intercept,
                }
            }
            KnnReg => Model::Knn(NeighborAverage::fit(z.view(), y, int("k").unwrap_or(5))?),
            DecisionTreeReg => Model::Tree(RegressionTree::fit(
                z.view(),
                y,
                TreeParams {
                    max_depth: int("max_depth"),
                    min_leaf: int("min_leaf").unwrap_or(5),
                },
            )?),
        };
        Ok(FittedRegressor {
            spec: self.clone(),
            standardizer,
            model,
            warnings,
        })
    }
}

fn rbf_kernel(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        let d: f64 = a.row(i).iter().zip(b.row(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum();
        (-gamma * d).exp()
    })
}

/// Minimizes `||y - c - Z b||^2 + alpha ||b||^2` through the centred normal
/// equations; the intercept `c` is not penalized.
fn least_squares(z: &Array2<f64>, y: &[f64], alpha: f64, warnings: &mut Vec<String>) -> (Vec<f64>, f64) {
    let (zc, means) = center(z);
    let y_mean = running_mean(y);
    let p = zc.ncols();
    if p == 0 {
        return (Vec::new(), y_mean);
    }
    let m = to_dmatrix(zc.view());
    let mut gram = m.transpose() * &m;
    for j in 0..p {
        gram[(j, j)] += alpha;
    }
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let rhs = m.transpose() * yc;
    let (b, dropped) = solve_symmetric(gram, &rhs);
    if dropped > 0 {
        warnings.push(format!(
            "singular normal equations: {dropped} direction(s) dropped, pseudo-inverse used"
        ));
    }
    let coef: Vec<f64> = b.iter().copied().collect();
    let intercept = y_mean - coef.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    (coef, intercept)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for
/// `(1/2n) ||y - c - Z b||^2 + alpha * rho * ||b||_1 + alpha * (1 - rho) / 2 * ||b||^2`,
/// stopped on the duality gap.
fn coordinate_descent(
    z: &Array2<f64>,
    y: &[f64],
    alpha: f64,
    rho: f64,
    warnings: &mut Vec<String>,
) -> (Vec<f64>, f64) {
    let (zc, means) = center(z);
    let n = y.len();
    let p = zc.ncols();
    let y_mean = running_mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let cols: Vec<Vec<f64>> = zc.columns().into_iter().map(|c| c.to_vec()).collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let l1 = alpha * rho * n as f64;
    let l2 = alpha * (1.0 - rho) * n as f64;
    let y_var = yc.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let tol = CD_GAP_TOL * y_var.max(1.0) * n as f64;
    let mut b = vec![0.0; p];
    let mut r = yc.clone();
    let mut gap = f64::INFINITY;
    for _ in 0..CD_MAX_SWEEPS {
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let old = b[j];
            let col = &cols[j];
            let rho_j: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() + norms[j] * old;
            let new = soft_threshold(rho_j, l1) / (norms[j] + l2);
            if new != old {
                let d = new - old;
                for (ri, ci) in r.iter_mut().zip(col) {
                    *ri -= d * ci;
                }
                b[j] = new;
            }
        }
        gap = duality_gap(&cols, &yc, &r, &b, l1, l2);
        if gap <= tol {
            break;
        }
    }
    if gap > tol {
        warnings.push(format!("coordinate descent stopped with duality gap {gap:.3e}"));
    }
    let intercept = y_mean - b.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    (b, intercept)
}

/// Gap of the `n`-scaled primal `0.5 ||r||^2 + l1 ||b||_1 + 0.5 l2 ||b||^2`
/// against its dual at the rescaled residual.
fn duality_gap(cols: &[Vec<f64>], y: &[f64], r: &[f64], b: &[f64], l1: f64, l2: f64) -> f64 {
    let xta: Vec<f64> = cols
        .iter()
        .zip(b)
        .map(|(c, bj)| c.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() - l2 * bj)
        .collect();
    let dual_norm = xta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let r_norm2: f64 = r.iter().map(|v| v * v).sum();
    let b_norm2: f64 = b.iter().map(|v| v * v).sum();
    let (scale, mut gap) = if dual_norm > l1 {
        let s = l1 / dual_norm;
        (s, 0.5 * r_norm2 * (1.0 + s * s))
    } else {
        (1.0, r_norm2)
    };
    let ry: f64 = r.iter().zip(y).map(|(a, b)| a * b).sum();
    let l1_norm: f64 = b.iter().map(|v| v.abs()).sum();
    gap += l1 * l1_norm - scale * ry + 0.5 * l2 * (1.0 + scale * scale) * b_norm2;
    gap
}

impl FittedRegressor {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let z = match &self.standardizer {
            Some(s) => s.transform(x)?,
            None => x.to_owned(),
        };
        match &self.model {
            Model::Linear {
                expansion,
                coef,
                intercept,
            } => {
                let f = expansion.apply(z.view())?;
                Ok(f.rows()
                    .into_iter()
                    .map(|row| intercept + row.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>())
                    .collect())
            }
            Model::Kernel {
                train,
                dual,
                gamma,
                intercept,
            } => {
                if z.ncols() != train.ncols() {
                    return Err(shape_err("query dimension differs from training data"));
                }
                let k = rbf_kernel(z.view(), train.view(), *gamma);
                Ok(k.rows()
                    .into_iter()
                    .map(|row| intercept + row.iter().zip(dual).map(|(a, b)| a * b).sum::<f64>())
                    .collect())
            }
            Model::Knn(m) => m.predict(z.view()),
            Model::Tree(t) => t.predict(z.view()),
        }
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    /// Coefficients on the expanded (and standardized, if enabled) features
    /// and the intercept, for linear families.
    pub fn coefficients(&self) -> Option<(&[f64], f64)> {
        match &self.model {
            Model::Linear { coef, intercept, .. } => Some((coef, *intercept)),
            _ => None,
        }
    }

    pub fn summary(&self) -> String {
        let detail = match &self.model {
            Model::Linear { coef, .. } => {
                let nz = coef.iter().filter(|c| **c != 0.0).count();
                format!("{nz}/{} non-zero coefficients", coef.len())
            }
            Model::Kernel { dual, .. } => format!("{} support rows", dual.len()),
            Model::Knn(_) => "neighbour average".to_string(),
            Model::Tree(t) => format!("depth {}", t.depth()),
        };
        format!("{}: {detail}", self.spec.describe())
    }
}
