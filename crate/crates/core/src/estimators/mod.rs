//! Treatment-effect estimators built on a small outcome/propensity model zoo.
//!
//! * COM fits one regressor on `(T, W)` and toggles `T`.
//! * GCOM fits one regressor per treatment arm.
//! * The X-learner imputes individual effects from the arm models, regresses
//!   them per arm and blends the two with the propensity score.
//! * IPW reweights outcomes by inverse propensities, optionally trimmed and
//!   stabilized.

mod classification;
mod features;
mod nonparametric;
mod regression;
mod spec;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use classification::{FittedClassifier, PROBABILITY_CLIP};
pub use features::{Expansion, Standardizer};
pub use regression::FittedRegressor;
pub use spec::{
    ClassifierFamily, ClassifierSpec, EstimatorSpec, Family, ModelSpec, ParamInfo, PropensityModel, RegressorFamily,
    RegressorSpec, Trim,
};

use crate::data::Dataset;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::math::running_mean;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Rows dropped by propensity trimming.
    pub n_trimmed: usize,
    pub warnings: Vec<String>,
    /// One summary line per fitted model.
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub ate: f64,
    /// Per-row effect estimates; `None` for IPW.
    pub iate: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl EstimatorResult {
    fn from_iate(iate: Vec<f64>, diagnostics: Diagnostics) -> Self {
        EstimatorResult {
            ate: running_mean(&iate),
            iate: Some(iate),
            diagnostics,
        }
    }
}

/// Blend weight `a(w)` in `a(w) tau0(w) + (1 - a(w)) tau1(w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XWeight {
    Propensity,
    Fixed(f64),
}

impl Diagnostics {
    fn record_regressor(&mut self, label: &str, f: &FittedRegressor) {
        self.models.push(format!("{label}: {}", f.summary()));
        self.warnings.extend(f.warnings.iter().map(|w| format!("{label}: {w}")));
    }

    fn record_classifier(&mut self, f: &FittedClassifier) {
        self.models.push(format!("propensity: {}", f.summary()));
        self.warnings.extend(f.warnings.iter().map(|w| format!("propensity: {w}")));
    }
}

fn with_treatment(w: ArrayView2<f64>, t: f64) -> Array2<f64> {
    let col = Array2::from_elem((w.nrows(), 1), t);
    concatenate![Axis(1), col, w]
}

fn arm_rows(ds: &Dataset, arm: f64) -> Result<(Array2<f64>, Vec<f64>)> {
    let idx = ds.arm_indices(arm);
    if idx.len() < 2 {
        return Err(arg_err(format!("treatment arm {arm} has {} row(s); at least two are needed", idx.len())));
    }
    Ok((ds.w.select(Axis(0), &idx), idx.iter().map(|&i| ds.y[i]).collect()))
}

pub fn com_estimate(outcome: &RegressorSpec, ds: &Dataset) -> Result<EstimatorResult> {
    ds.validate()?;
    let t = Array2::from_shape_fn((ds.n(), 1), |(i, _)| ds.t[i]);
    let tw = concatenate![Axis(1), t, ds.w];
    let fitted = outcome.fit(tw.view(), &ds.y)?;
    let mu1 = fitted.predict(with_treatment(ds.w.view(), 1.0).view())?;
    let mu0 = fitted.predict(with_treatment(ds.w.view(), 0.0).view())?;
    let mut diag = Diagnostics::default();
    diag.record_regressor("outcome", &fitted);
    Ok(EstimatorResult::from_iate(
        mu1.iter().zip(&mu0).map(|(a, b)| a - b).collect(),
        diag,
    ))
}

pub fn gcom_estimate(outcome: &RegressorSpec, ds: &Dataset) -> Result<EstimatorResult> {
    ds.validate()?;
    let (w1, y1) = arm_rows(ds, 1.0)?;
    let (w0, y0) = arm_rows(ds, 0.0)?;
    let f1 = outcome.fit(w1.view(), &y1)?;
    let f0 = outcome.fit(w0.view(), &y0)?;
    let mu1 = f1.predict(ds.w.view())?;
    let mu0 = f0.predict(ds.w.view())?;
    let mut diag = Diagnostics::default();
    diag.record_regressor("treated outcome", &f1);
    diag.record_regressor("control outcome", &f0);
    Ok(EstimatorResult::from_iate(
        mu1.iter().zip(&mu0).map(|(a, b)| a - b).collect(),
        diag,
    ))
}

fn propensity_scores(
    model: &PropensityModel,
    ds: &Dataset,
    oracle: Option<&[f64]>,
    diag: &mut Diagnostics,
) -> Result<Vec<f64>> {
    match model {
        PropensityModel::Fitted(spec) => {
            let fitted = spec.fit(ds.w.view(), &ds.t)?;
            diag.record_classifier(&fitted);
            fitted.predict_proba(ds.w.view())
        }
        PropensityModel::Oracle => {
            let e = oracle.ok_or_else(|| arg_err("oracle propensity requested but none was supplied"))?;
            if e.len() != ds.n() {
                return Err(shape_err(format!("{} oracle propensities for {} rows", e.len(), ds.n())));
            }
            if e.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(arg_err("oracle propensities must lie in [0, 1]"));
            }
            diag.models.push("propensity: oracle".into());
            Ok(e.to_vec())
        }
    }
}

pub fn xlearner_estimate(
    outcome: &RegressorSpec,
    propensity: &PropensityModel,
    ds: &Dataset,
    oracle: Option<&[f64]>,
) -> Result<EstimatorResult> {
    xlearner_weighted(outcome, propensity, ds, oracle, XWeight::Propensity)
}

/// X-learner with an explicit blend weight; `XWeight::Fixed(1.0)` returns
/// the control-arm effect regression alone.
pub fn xlearner_weighted(
    outcome: &RegressorSpec,
    propensity: &PropensityModel,
    ds: &Dataset,
    oracle: Option<&[f64]>,
    weight: XWeight,
) -> Result<EstimatorResult> {
    ds.validate()?;
    let (w1, y1) = arm_rows(ds, 1.0)?;
    let (w0, y0) = arm_rows(ds, 0.0)?;
    let mut diag = Diagnostics::default();
    let mu1 = outcome.fit(w1.view(), &y1)?;
    let mu0 = outcome.fit(w0.view(), &y0)?;
    diag.record_regressor("treated outcome", &mu1);
    diag.record_regressor("control outcome", &mu0);
    let d1: Vec<f64> = y1.iter().zip(mu0.predict(w1.view())?).map(|(y, m)| y - m).collect();
    let d0: Vec<f64> = mu1.predict(w0.view())?.iter().zip(&y0).map(|(m, y)| m - y).collect();
    let tau1 = outcome.fit(w1.view(), &d1)?;
    let tau0 = outcome.fit(w0.view(), &d0)?;
    diag.record_regressor("treated effect", &tau1);
    diag.record_regressor("control effect", &tau0);
    let t1 = tau1.predict(ds.w.view())?;
    let t0 = tau0.predict(ds.w.view())?;
    let alpha = match weight {
        XWeight::Propensity => propensity_scores(propensity, ds, oracle, &mut diag)?,
        XWeight::Fixed(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(arg_err(format!("blend weight {a} is outside [0, 1]")));
            }
            vec![a; ds.n()]
        }
    };
    let iate = (0..ds.n()).map(|i| alpha[i] * t0[i] + (1.0 - alpha[i]) * t1[i]).collect();
    Ok(EstimatorResult::from_iate(iate, diag))
}

pub fn ipw_estimate(
    propensity: &PropensityModel,
    trim: Option<Trim>,
    stabilized: bool,
    ds: &Dataset,
    oracle: Option<&[f64]>,
) -> Result<EstimatorResult> {
    ds.validate()?;
    let mut diag = Diagnostics::default();
    let e = propensity_scores(propensity, ds, oracle, &mut diag)?;
    let kept: Vec<usize> = match trim {
        Some(b) => (0..ds.n()).filter(|&i| e[i] >= b.low && e[i] <= b.high).collect(),
        None => (0..ds.n()).collect(),
    };
    diag.n_trimmed = ds.n() - kept.len();
    if kept.is_empty() {
        let b = trim.unwrap_or_default();
        return Err(Error::EmptyAfterTrim { low: b.low, high: b.high });
    }
    let m = kept.len() as f64;
    let (p1, p0) = if stabilized {
        let p1 = kept.iter().filter(|&&i| ds.t[i] == 1.0).count() as f64 / m;
        (p1, 1.0 - p1)
    } else {
        (1.0, 1.0)
    };
    let mut terms = Vec::with_capacity(kept.len());
    for &i in &kept {
        let term = if ds.t[i] == 1.0 {
            p1 * ds.y[i] / e[i]
        } else {
            -p0 * ds.y[i] / (1.0 - e[i])
        };
        if !term.is_finite() {
            return Err(Error::Numeric(format!("infinite inverse weight at row {i} (propensity {})", e[i])));
        }
        terms.push(term);
    }
    Ok(EstimatorResult {
        ate: terms.iter().sum::<f64>() / m,
        iate: None,
        diagnostics: diag,
    })
}

impl EstimatorSpec {
    /// Runs the estimator. `oracle` holds known propensities, one per row,
    /// required exactly for `ipw/oracle`.
    pub fn estimate(&self, ds: &Dataset, oracle: Option<&[f64]>) -> Result<EstimatorResult> {
        self.validate()?;
        match self {
            EstimatorSpec::Com { outcome } => com_estimate(outcome, ds),
            EstimatorSpec::Gcom { outcome } => gcom_estimate(outcome, ds),
            EstimatorSpec::Xlearner { outcome, propensity } => xlearner_estimate(outcome, propensity, ds, oracle),
            EstimatorSpec::Ipw {
                propensity,
                trim,
                stabilized,
            } => ipw_estimate(propensity, *trim, *stabilized, ds, oracle),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ols() -> RegressorSpec {
        RegressorSpec::new(RegressorFamily::Ols)
    }

    fn dataset(w: Array2<f64>, t: Vec<f64>, y: Vec<f64>) -> Dataset {
        let d = w.ncols();
        Dataset::new(w, t, y)
            .unwrap()
            .with_columns((0..d).map(|j| format!("w{j}")).collect())
            .unwrap()
    }

    /// Confounded linear data with `Y = 3T + w.beta + noise`.
    fn linear_confounded(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let w = Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut rng));
        let mut t = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for r in w.rows() {
            let e = crate::math::sigmoid(0.8 * r[0] - 0.4 * r[1]);
            let ti = (rng.random::<f64>() < e) as u8 as f64;
            let noise: f64 = StandardNormal.sample(&mut rng);
            t.push(ti);
            y.push(3.0 * ti + 1.5 * r[0] - r[1] + noise);
        }
        dataset(w, t, y)
    }

    #[test]
    fn com_recovers_linear_effect() {
        let ds = linear_confounded(2000, 1);
        let res = com_estimate(&ols(), &ds).unwrap();
        // OLS standard error of the T coefficient from the fitted residuals.
        let x = concatenate![
            Axis(1),
            Array2::from_shape_vec((ds.n(), 1), ds.t.clone()).unwrap(),
            ds.w
        ];
        let n = ds.n() as f64;
        let tbar = ds.treated_fraction();
        let var_t = ds.t.iter().map(|t| (t - tbar).powi(2)).sum::<f64>();
        let f = ols().fit(x.view(), &ds.y).unwrap();
        let resid: f64 = f
            .predict(x.view())
            .unwrap()
            .iter()
            .zip(&ds.y)
            .map(|(p, y)| (y - p).powi(2))
            .sum();
        // Confounding inflates the variance; the unadjusted bound is a lower
        // bound so scale it generously by the R^2 of T on W (< 0.3 here).
        let se = (resid / (n - 4.0) / var_t / 0.7).sqrt();
        assert!((res.ate - 3.0).abs() < 3.0 * se, "{} (se {se})", res.ate);
        let iate = res.iate.unwrap();
        assert!(iate.iter().all(|v| (v - iate[0]).abs() < 1e-9));
    }

    #[test]
    fn com_null_effect() {
        let mut ds = linear_confounded(3000, 2);
        for (y, t) in ds.y.iter_mut().zip(&ds.t) {
            *y -= 3.0 * t;
        }
        let res = com_estimate(&RegressorSpec::new(RegressorFamily::OlsInteract), &ds).unwrap();
        assert!(res.ate.abs() < 0.15, "{}", res.ate);
    }

    #[test]
    fn gcom_two_lines() {
        let w = Array2::from_shape_fn((20, 1), |(i, _)| i as f64 / 4.0);
        let t: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = (0..20)
            .map(|i| {
                let x = i as f64 / 4.0;
                if i % 2 == 1 {
                    1.0 + 3.0 * x
                } else {
                    -2.0 + 0.5 * x
                }
            })
            .collect();
        let ds = dataset(w.clone(), t, y);
        let res = gcom_estimate(&ols(), &ds).unwrap();
        for (x, tau) in w.column(0).iter().zip(res.iate.unwrap()) {
            assert!((tau - (3.0 + 2.5 * x)).abs() < 1e-6);
        }
    }

    #[test]
    fn gcom_constant_outcomes_give_zero() {
        let w = Array2::from_shape_fn((10, 2), |(i, j)| (i * (j + 1)) as f64 * 0.37);
        let t: Vec<f64> = (0..10).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let ds = dataset(w, t, vec![0.1; 10]);
        for f in RegressorFamily::all() {
            let res = gcom_estimate(&RegressorSpec::new(*f).with_param_k(), &ds).unwrap();
            assert_eq!(res.ate, 0.0, "{f:?}");
        }
    }

    impl RegressorSpec {
        /// Small arms need fewer neighbours than the default.
        fn with_param_k(self) -> Self {
            if self.family == RegressorFamily::KnnReg {
                self.with_param("k", 2.0).unwrap()
            } else {
                self
            }
        }
    }

    #[test]
    fn gcom_ols_equals_com_interacted() {
        for seed in 0..5 {
            let mut ds = linear_confounded(300, 10 + seed);
            for (i, y) in ds.y.iter_mut().enumerate() {
                *y += ds.t[i] * ds.w[[i, 0]] * 2.0 + ds.w[[i, 1]].powi(2);
            }
            let g = gcom_estimate(&ols(), &ds).unwrap();
            let c = com_estimate(&RegressorSpec::new(RegressorFamily::OlsInteract), &ds).unwrap();
            assert!((g.ate - c.ate).abs() < 1e-8);
            for (a, b) in g.iate.unwrap().iter().zip(c.iate.unwrap()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn empty_arm_is_an_error() {
        let w = Array2::from_shape_fn((5, 1), |(i, _)| i as f64);
        let ds = dataset(w, vec![1.0; 5], vec![1.0; 5]);
        assert!(matches!(gcom_estimate(&ols(), &ds), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn xlearner_endpoints_and_homogeneous_effect() {
        let mut ds = linear_confounded(400, 3);
        for (y, t) in ds.y.iter_mut().zip(&ds.t) {
            *y -= 3.0 * t;
        }
        // Y(0) exactly linear so first-stage OLS fits are exact.
        let mut rng = rng_from_seed(5);
        for i in 0..ds.n() {
            ds.y[i] = 1.0 + ds.w[[i, 0]] - 2.0 * ds.w[[i, 1]] + 2.0 * ds.t[i];
        }
        let _ = rng.random::<f64>();
        let prop = PropensityModel::Fitted(ClassifierSpec::new(ClassifierFamily::LogisticL2));
        let full = xlearner_estimate(&ols(), &prop, &ds, None).unwrap();
        for v in full.iate.as_ref().unwrap() {
            assert!((v - 2.0).abs() < 1e-6);
        }

        let mut noisy = linear_confounded(400, 4);
        for i in 0..noisy.n() {
            noisy.y[i] += noisy.t[i] * noisy.w[[i, 0]];
        }
        let one = xlearner_weighted(&ols(), &prop, &noisy, None, XWeight::Fixed(1.0)).unwrap();
        let zero = xlearner_weighted(&ols(), &prop, &noisy, None, XWeight::Fixed(0.0)).unwrap();
        // Independent reconstruction of the two branches.
        let (w1, y1) = arm_rows(&noisy, 1.0).unwrap();
        let (w0, y0) = arm_rows(&noisy, 0.0).unwrap();
        let m1 = ols().fit(w1.view(), &y1).unwrap();
        let m0 = ols().fit(w0.view(), &y0).unwrap();
        let d0: Vec<f64> = m1.predict(w0.view()).unwrap().iter().zip(&y0).map(|(m, y)| m - y).collect();
        let d1: Vec<f64> = y1.iter().zip(m0.predict(w1.view()).unwrap()).map(|(y, m)| y - m).collect();
        let tau0 = ols().fit(w0.view(), &d0).unwrap().predict(noisy.w.view()).unwrap();
        let tau1 = ols().fit(w1.view(), &d1).unwrap().predict(noisy.w.view()).unwrap();
        assert_eq!(one.iate.unwrap(), tau0);
        assert_eq!(zero.iate.unwrap(), tau1);
    }

    #[test]
    fn ipw_hand_example() {
        let w = Array2::zeros((4, 1));
        let ds = dataset(w, vec![1.0, 0.0, 1.0, 0.0], vec![2.0, 1.0, 4.0, 3.0]);
        let e = [0.5; 4];
        let res = ipw_estimate(&PropensityModel::Oracle, None, false, &ds, Some(&e)).unwrap();
        assert!((res.ate - 1.0).abs() < 1e-12);
        assert!(res.iate.is_none());
        let trimmed = ipw_estimate(&PropensityModel::Oracle, Some(Trim::default()), false, &ds, Some(&e)).unwrap();
        assert_eq!(trimmed.ate, res.ate);
        assert_eq!(trimmed.diagnostics.n_trimmed, 0);
    }

    #[test]
    fn ipw_with_marginal_propensity_is_difference_in_means() {
        let w = Array2::zeros((7, 1));
        let t = vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let y: Vec<f64> = t.iter().map(|t| if *t == 1.0 { 5.0 } else { 2.0 }).collect();
        let ds = dataset(w, t, y);
        let e = vec![3.0 / 7.0; 7];
        let res = ipw_estimate(&PropensityModel::Oracle, None, false, &ds, Some(&e)).unwrap();
        assert!((res.ate - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ipw_trimming_and_errors() {
        let w = Array2::zeros((4, 1));
        let ds = dataset(w, vec![1.0, 0.0, 1.0, 0.0], vec![2.0, 1.0, 4.0, 3.0]);
        let e = [0.005, 0.5, 0.5, 0.995];
        let res = ipw_estimate(&PropensityModel::Oracle, Some(Trim::default()), false, &ds, Some(&e)).unwrap();
        assert_eq!(res.diagnostics.n_trimmed, 2);
        assert!((res.ate - (0.5 * (8.0 - 2.0))).abs() < 1e-12);
        let narrow = Trim { low: 0.6, high: 0.7 };
        assert!(matches!(
            ipw_estimate(&PropensityModel::Oracle, Some(narrow), false, &ds, Some(&e)),
            Err(Error::EmptyAfterTrim { .. })
        ));
        assert!(ipw_estimate(&PropensityModel::Oracle, None, false, &ds, None).is_err());
        // Stabilized with P(T=1) = 1/2 over kept rows halves each arm's term.
        let s = ipw_estimate(&PropensityModel::Oracle, Some(Trim::default()), true, &ds, Some(&e)).unwrap();
        assert!((s.ate - 0.5 * res.ate).abs() < 1e-12);
    }

    #[test]
    fn ipw_with_true_propensity_is_unbiased() {
        let reps = 500;
        let n = 400;
        let mut estimates = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = rng_from_seed(1000 + r as u64);
            let w = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
            let e: Vec<f64> = w.column(0).iter().map(|x| crate::math::sigmoid(1.5 * x)).collect();
            let t: Vec<f64> = e.iter().map(|p| (rng.random::<f64>() < *p) as u8 as f64).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    2.0 * w[[i, 0]] + t[i] * (1.0 + w[[i, 0]]) + noise
                })
                .collect();
            let ds = dataset(w, t, y);
            estimates.push(ipw_estimate(&PropensityModel::Oracle, None, false, &ds, Some(&e)).unwrap().ate);
        }
        let m = estimates.iter().sum::<f64>() / reps as f64;
        let sd = (estimates.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
        // True ATE is E[1 + W] = 1.
        assert!((m - 1.0).abs() < 3.0 * sd / (reps as f64).sqrt(), "{m} (sd {sd})");
    }

    #[test]
    fn estimates_are_permutation_invariant() {
        let ds = linear_confounded(120, 7);
        let mut order: Vec<usize> = (0..ds.n()).collect();
        order.reverse();
        order.swap(3, 50);
        let perm = ds.select_rows(&order);
        for id in [
            "com/ols_poly2",
            "gcom/ridge",
            "gcom/lasso",
            "com/kernel_ridge_rbf",
            "gcom/knn_reg",
            "com/decision_tree_reg",
            "xlearner/ols+gaussian_nb",
            "ipw/logistic_l2?trim=true",
            "ipw/logistic_l1?stabilized=true",
            "ipw/qda",
            "ipw/knn_clf",
            "ipw/decision_tree_clf",
        ] {
            let spec = EstimatorSpec::parse(id).unwrap();
            let a = spec.estimate(&ds, None).unwrap();
            let b = spec.estimate(&perm, None).unwrap();
            assert!((a.ate - b.ate).abs() < 1e-8, "{id}: {} vs {}", a.ate, b.ate);
            if let (Some(x), Some(y)) = (a.iate, b.iate) {
                for (k, &i) in order.iter().enumerate() {
                    assert!((x[i] - y[k]).abs() < 1e-8, "{id}");
                }
            }
        }
    }

    #[test]
    fn mean_iate_equals_ate() {
        let ds = linear_confounded(150, 8);
        for id in ["com/ols_poly3", "gcom/elastic_net", "xlearner/decision_tree_reg+logistic_unregularized"] {
            let res = EstimatorSpec::parse(id).unwrap().estimate(&ds, None).unwrap();
            let iate = res.iate.unwrap();
            let m = iate.iter().sum::<f64>() / iate.len() as f64;
            assert!((m - res.ate).abs() < 1e-9);
        }
    }
}
