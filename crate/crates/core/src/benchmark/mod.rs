//! Replicated evaluation of estimators against a generative model with known
//! estimands, and the realism/fidelity report comparing a model with
//! held-out data.

mod fidelity;
mod metrics;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fidelity::{fidelity_report, EffectFidelity, FidelityConfig, FidelityReport, FidelityRow, TestKind, TestSelection, Variables};
pub use metrics::{ate_metrics, pehe, AteMetrics};

use crate::data::Dataset;
use crate::error::{arg_err, Result};
use crate::estimators::{EstimatorResult, EstimatorSpec};
use crate::model::{GenerativeModel, GroundTruth};

/// Anything that maps a sampled dataset to an effect estimate. The ground
/// truth is passed so oracle propensities can be supplied; estimators must
/// not otherwise use it.
pub trait Estimator: Sync {
    fn id(&self) -> String;
    fn estimate(&self, data: &Dataset, truth: &GroundTruth) -> Result<EstimatorResult>;
}

impl Estimator for EstimatorSpec {
    fn id(&self) -> String {
        EstimatorSpec::id(self)
    }

    fn estimate(&self, data: &Dataset, truth: &GroundTruth) -> Result<EstimatorResult> {
        EstimatorSpec::estimate(self, data, Some(&truth.propensity))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub replications: usize,
    /// Units per replication; defaults to the model's training size.
    pub samples: Option<usize>,
    /// Estimator identifiers such as `com/ridge` or `ipw/oracle?trim=true`.
    pub estimators: Vec<String>,
    pub base_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            replications: 100,
            samples: None,
            estimators: Vec::new(),
            base_seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(arg_err("at least one replication is required"));
        }
        if self.samples.is_some_and(|n| n < 10) {
            return Err(arg_err("at least 10 samples per replication are required"));
        }
        self.parse_estimators().map(|_| ())
    }

    pub fn parse_estimators(&self) -> Result<Vec<EstimatorSpec>> {
        self.estimators.iter().map(|id| EstimatorSpec::parse(id)).collect()
    }
}

/// One row of a benchmark table. `std` is a population standard deviation
/// over the successful replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub estimator: String,
    pub bias: f64,
    pub abs_bias: f64,
    pub std: f64,
    pub rmse: f64,
    /// Absent for estimators that produce no IATEs.
    pub mean_pehe: Option<f64>,
    pub n_failures: usize,
}

struct Outcome {
    estimate: f64,
    truth: f64,
    pehe: Option<f64>,
}

pub fn run_benchmark(model: &GenerativeModel, config: &BenchmarkConfig) -> Result<Vec<MetricRow>> {
    config.validate()?;
    let specs = config.parse_estimators()?;
    let refs: Vec<&dyn Estimator> = specs.iter().map(|s| s as &dyn Estimator).collect();
    run_estimators(model, config, &refs)
}

/// Replication `i` samples from `model` with seed `base_seed + i`, computes
/// the ground truth on its covariate rows and runs every estimator. A
/// failing estimator is counted and left out of that replication's
/// aggregates.
pub fn run_estimators(
    model: &GenerativeModel,
    config: &BenchmarkConfig,
    estimators: &[&dyn Estimator],
) -> Result<Vec<MetricRow>> {
    if estimators.is_empty() {
        return Err(arg_err("the estimator list is empty"));
    }
    if config.replications < 1 {
        return Err(arg_err("at least one replication is required"));
    }
    let n = config.samples.unwrap_or(model.covariates.nrows());
    if n < 10 {
        return Err(arg_err("at least 10 samples per replication are required"));
    }
    let per_rep = (0..config.replications as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<Option<Outcome>>> {
            let data = model.sample(n, config.base_seed.wrapping_add(i))?;
            let truth = model.ground_truth(&data.w)?;
            Ok(estimators
                .iter()
                .map(|est| match evaluate(*est, &data, &truth) {
                    Ok(o) => Some(o),
                    Err(e) => {
                        warn!("replication {i}: estimator {} failed: {e}", est.id());
                        None
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(estimators
        .iter()
        .enumerate()
        .map(|(k, est)| {
            let done: Vec<&Outcome> = per_rep.iter().filter_map(|r| r[k].as_ref()).collect();
            let n_failures = config.replications - done.len();
            let estimates: Vec<f64> = done.iter().map(|o| o.estimate).collect();
            let truths: Vec<f64> = done.iter().map(|o| o.truth).collect();
            let m = ate_metrics(&estimates, &truths).unwrap_or(AteMetrics {
                bias: f64::NAN,
                abs_bias: f64::NAN,
                std: f64::NAN,
                rmse: f64::NAN,
            });
            let pehes: Vec<f64> = done.iter().filter_map(|o| o.pehe).collect();
            let mean_pehe = (!pehes.is_empty()).then(|| pehes.iter().sum::<f64>() / pehes.len() as f64);
            MetricRow {
                estimator: est.id(),
                bias: m.bias,
                abs_bias: m.abs_bias,
                std: m.std,
                rmse: m.rmse,
                mean_pehe,
                n_failures,
            }
        })
        .collect())
}

fn evaluate(est: &dyn Estimator, data: &Dataset, truth: &GroundTruth) -> Result<Outcome> {
    let res = est.estimate(data, truth)?;
    if !res.ate.is_finite() {
        return Err(crate::error::Error::Numeric("non-finite ATE estimate".into()));
    }
    let pehe = res.iate.as_deref().map(|iate| pehe(iate, &truth.iate)).transpose()?;
    Ok(Outcome {
        estimate: res.ate,
        truth: truth.ate,
        pehe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Diagnostics;
    use crate::model::{KnobConfig, LinearHead};
    use crate::rng::rng_from_seed;
    use ndarray::Array2;
    use rand::Rng;

    fn linear_model() -> GenerativeModel {
        let mut rng = rng_from_seed(3);
        let w = Array2::from_shape_fn((200, 2), |_| rng.random_range(-1.0..1.0));
        GenerativeModel::linear_gaussian(
            w,
            LinearHead {
                coefficients: vec![0.8, -0.5],
                intercept: 0.0,
            },
            [
                LinearHead {
                    coefficients: vec![1.0, 1.0],
                    intercept: 0.0,
                },
                LinearHead {
                    coefficients: vec![2.0, 1.0],
                    intercept: 1.5,
                },
            ],
            [0.0, 0.0],
        )
        .unwrap()
    }

    struct Offset(f64);

    impl Estimator for Offset {
        fn id(&self) -> String {
            format!("offset{}", self.0)
        }

        fn estimate(&self, _: &Dataset, truth: &GroundTruth) -> Result<EstimatorResult> {
            Ok(EstimatorResult {
                ate: truth.ate + self.0,
                iate: Some(truth.iate.iter().map(|v| v + self.0).collect()),
                diagnostics: Diagnostics::default(),
            })
        }
    }

    struct Flaky;

    impl Estimator for Flaky {
        fn id(&self) -> String {
            "flaky".into()
        }

        fn estimate(&self, data: &Dataset, truth: &GroundTruth) -> Result<EstimatorResult> {
            if data.t[0] == 1.0 {
                return Err(arg_err("unlucky"));
            }
            Ok(EstimatorResult {
                ate: truth.ate,
                iate: None,
                diagnostics: Diagnostics::default(),
            })
        }
    }

    fn config(reps: usize) -> BenchmarkConfig {
        BenchmarkConfig {
            replications: reps,
            samples: Some(100),
            estimators: vec![],
            base_seed: 7,
        }
    }

    #[test]
    fn perfect_and_offset_estimators() {
        let model = linear_model();
        let rows = run_estimators(&model, &config(20), &[&Offset(0.0), &Offset(0.3), &Flaky]).unwrap();
        assert_eq!((rows[0].bias, rows[0].std, rows[0].rmse, rows[0].mean_pehe), (0.0, 0.0, 0.0, Some(0.0)));
        assert!((rows[1].bias - 0.3).abs() < 1e-12);
        assert!(rows[1].std < 1e-12);
        assert!((rows[1].rmse - 0.3).abs() < 1e-12);
        assert!((rows[1].mean_pehe.unwrap() - 0.3).abs() < 1e-12);
        assert!(rows[2].n_failures > 0 && rows[2].n_failures < 20);
        assert_eq!(rows[2].mean_pehe, None);
        assert_eq!(rows[2].rmse, 0.0);
    }

    #[test]
    fn tables_are_deterministic_and_decompose() {
        let model = linear_model();
        let mut cfg = config(12);
        cfg.estimators = vec!["com/ols".into(), "gcom/ols".into(), "ipw/oracle?stabilized=true".into()];
        let a = run_benchmark(&model, &cfg).unwrap();
        let b = run_benchmark(&model, &cfg).unwrap();
        assert_eq!(a, b);
        for row in &a {
            assert!((row.rmse.powi(2) - row.bias.powi(2) - row.std.powi(2)).abs() < 1e-9);
            assert_eq!(row.abs_bias, row.bias.abs());
        }
        assert_eq!(a[2].mean_pehe, None);
    }

    #[test]
    fn homogeneous_model_favours_constant_predictor() {
        let model = linear_model()
            .apply_knobs(KnobConfig {
                heterogeneity_lambda: 0.0,
                ..Default::default()
            })
            .unwrap();
        let mut cfg = config(5);
        cfg.estimators = vec!["gcom/ols".into()];
        let rows = run_estimators(&model, &cfg, &[&Offset(0.0)]).unwrap();
        assert_eq!(rows[0].mean_pehe, Some(0.0));
        let gcom = run_benchmark(&model, &cfg).unwrap();
        assert!(gcom[0].mean_pehe.unwrap() > 0.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let model = linear_model();
        assert!(run_estimators(&model, &config(3), &[]).is_err());
        let mut cfg = config(3);
        cfg.estimators = vec!["com/svm".into()];
        assert!(matches!(run_benchmark(&model, &cfg), Err(crate::Error::UnknownEstimator(id)) if id == "com/svm"));
        cfg.estimators = vec!["com/ols".into()];
        cfg.samples = Some(5);
        assert!(run_benchmark(&model, &cfg).is_err());
    }
}
