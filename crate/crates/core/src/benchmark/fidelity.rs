use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::pehe;
use crate::data::Dataset;
use crate::error::{arg_err, Error, Result};
use crate::math::running_mean;
use crate::model::GenerativeModel;
use crate::rng::sub_seed;
use crate::two_sample::{es_test, ks_test, permutation_test_with, SampleMatrix, Statistic, TestReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variables {
    T,
    Y,
    TY,
    WTY,
}

impl Variables {
    fn name(self) -> &'static str {
        match self {
            Variables::T => "t",
            Variables::Y => "y",
            Variables::TY => "t,y",
            Variables::WTY => "w,t,y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Ks,
    Es,
    Wass1,
    Wass2,
    Fr,
    Knn,
    Energy,
}

impl TestKind {
    fn name(self) -> &'static str {
        match self {
            TestKind::Ks => "ks",
            TestKind::Es => "es",
            TestKind::Wass1 => "wass1",
            TestKind::Wass2 => "wass2",
            TestKind::Fr => "fr",
            TestKind::Knn => "knn",
            TestKind::Energy => "energy",
        }
    }
}

/// One configured test, written `test:variables` (e.g. `ks:y`,
/// `energy:wty`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TestSelection {
    pub test: TestKind,
    pub variables: Variables,
}

impl fmt::Display for TestSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.variables {
            Variables::T => "t",
            Variables::Y => "y",
            Variables::TY => "ty",
            Variables::WTY => "wty",
        };
        write!(f, "{}:{v}", self.test.name())
    }
}

impl FromStr for TestSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || arg_err(format!("unknown two-sample test `{s}` (expected e.g. ks:y or energy:wty)"));
        let (test, vars) = s.split_once(':').ok_or_else(bad)?;
        let test = match test {
            "ks" => TestKind::Ks,
            "es" => TestKind::Es,
            "wass1" => TestKind::Wass1,
            "wass2" => TestKind::Wass2,
            "fr" => TestKind::Fr,
            "knn" => TestKind::Knn,
            "energy" => TestKind::Energy,
            _ => return Err(bad()),
        };
        let variables = match vars {
            "t" => Variables::T,
            "y" => Variables::Y,
            "ty" => Variables::TY,
            "wty" => Variables::WTY,
            _ => return Err(bad()),
        };
        if matches!(test, TestKind::Ks | TestKind::Es) && matches!(variables, Variables::TY | Variables::WTY) {
            return Err(arg_err(format!("`{s}`: {} is univariate", test.name())));
        }
        Ok(TestSelection { test, variables })
    }
}

impl TryFrom<String> for TestSelection {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TestSelection> for String {
    fn from(t: TestSelection) -> String {
        t.to_string()
    }
}

impl TestSelection {
    /// KS and ES on `T` and `Y`, then the five multivariate tests on
    /// `(T, Y)` and on `(W, T, Y)`.
    pub fn default_battery() -> Vec<TestSelection> {
        use TestKind::*;
        let mut out = Vec::new();
        for v in [Variables::T, Variables::Y] {
            for t in [Ks, Es] {
                out.push(TestSelection { test: t, variables: v });
            }
        }
        for v in [Variables::TY, Variables::WTY] {
            for t in [Wass1, Wass2, Fr, Knn, Energy] {
                out.push(TestSelection { test: t, variables: v });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityConfig {
    pub permutations: usize,
    pub seed: u64,
    /// Neighbours per point for the kNN statistic.
    pub knn_k: usize,
    pub tests: Vec<TestSelection>,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            permutations: 1000,
            seed: 0,
            knn_k: 1,
            tests: TestSelection::default_battery(),
        }
    }
}

impl FidelityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.permutations < 1 {
            return Err(arg_err("at least one permutation is required"));
        }
        if self.knn_k < 1 {
            return Err(arg_err("knn_k must be at least 1"));
        }
        if self.tests.is_empty() {
            return Err(arg_err("no two-sample tests configured"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub variables: String,
    pub test: String,
    /// NaN when the test could not be computed.
    pub statistic: f64,
    pub p_value: f64,
    pub method: String,
    pub permutations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectFidelity {
    pub true_ate: f64,
    pub model_ate: f64,
    pub abs_bias: f64,
    pub pehe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub rows: Vec<FidelityRow>,
    /// Present when the held-out data carries known potential-outcome means.
    pub effects: Option<EffectFidelity>,
}

/// Columns of `data` on the model's preprocessed scale.
fn scaled_columns(model: &GenerativeModel, data: &Dataset) -> Result<(Array2<f64>, Vec<f64>, Vec<f64>)> {
    let w = model.preprocess.transform_w(&data.w)?;
    let y = data.y.iter().map(|&v| model.preprocess.y.forward(v)).collect();
    Ok((w, data.t.clone(), y))
}

fn assemble(vars: Variables, w: &Array2<f64>, t: &[f64], y: &[f64]) -> Result<SampleMatrix> {
    let n = t.len();
    let m = match vars {
        Variables::T => Array2::from_shape_fn((n, 1), |(i, _)| t[i]),
        Variables::Y => Array2::from_shape_fn((n, 1), |(i, _)| y[i]),
        Variables::TY => Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { t[i] } else { y[i] }),
        Variables::WTY => {
            let d = w.ncols();
            Array2::from_shape_fn((n, d + 2), |(i, j)| match j {
                j if j < d => w[[i, j]],
                j if j == d => t[i],
                _ => y[i],
            })
        }
    };
    SampleMatrix::new(m)
}

/// Compares held-out real rows with model draws of `T` and `Y` at the same
/// covariate rows, on the model's preprocessed scale. A test that cannot
/// be computed yields a NaN row instead of failing the report.
pub fn fidelity_report(model: &GenerativeModel, heldout: &Dataset, config: &FidelityConfig) -> Result<FidelityReport> {
    config.validate()?;
    heldout.validate()?;
    let (t_gen, y_gen) = model.sample_at(&heldout.w, sub_seed(config.seed, 0))?;
    let (rw, rt, ry) = scaled_columns(model, heldout)?;
    let gw = rw.clone();
    let gt = t_gen;
    let gy: Vec<f64> = y_gen.iter().map(|&v| model.preprocess.y.forward(v)).collect();
    let mut rows = Vec::with_capacity(config.tests.len());
    for (k, sel) in config.tests.iter().enumerate() {
        let seed = sub_seed(config.seed, 1 + k as u64);
        let run = || -> Result<TestReport> {
            let real = assemble(sel.variables, &rw, &rt, &ry)?;
            let fake = assemble(sel.variables, &gw, &gt, &gy)?;
            let column = |s: &SampleMatrix| s.rows().column(0).to_vec();
            let stat = match sel.test {
                TestKind::Ks => return ks_test(&column(&real), &column(&fake)),
                TestKind::Es => return es_test(&column(&real), &column(&fake)),
                TestKind::Wass1 => Statistic::Wasserstein { order: 1 },
                TestKind::Wass2 => Statistic::Wasserstein { order: 2 },
                TestKind::Fr => Statistic::FriedmanRafsky,
                TestKind::Knn => Statistic::Knn { k: config.knn_k },
                TestKind::Energy => Statistic::Energy,
            };
            permutation_test_with(&real, &fake, stat, config.permutations, seed)
        };
        rows.push(match run() {
            Ok(r) => FidelityRow {
                variables: sel.variables.name().into(),
                test: sel.test.name().into(),
                statistic: r.statistic,
                p_value: r.p_value,
                method: r.method,
                permutations: r.permutations,
                seed,
            },
            Err(e) => {
                warn!("two-sample test {sel} failed: {e}");
                FidelityRow {
                    variables: sel.variables.name().into(),
                    test: sel.test.name().into(),
                    statistic: f64::NAN,
                    p_value: f64::NAN,
                    method: "failed".into(),
                    permutations: 0,
                    seed,
                }
            }
        });
    }
    let effects = match &heldout.effects {
        Some(e) => {
            let true_iate = e.iate();
            let gt = model.ground_truth(&heldout.w)?;
            let true_ate = running_mean(&true_iate);
            Some(EffectFidelity {
                true_ate,
                model_ate: gt.ate,
                abs_bias: (gt.ate - true_ate).abs(),
                pehe: pehe(&gt.iate, &true_iate)?,
            })
        }
        None => None,
    };
    Ok(FidelityReport { rows, effects })
}
