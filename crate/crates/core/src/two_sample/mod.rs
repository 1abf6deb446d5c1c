//! Two-sample tests used to certify that generated data is statistically
//! indistinguishable from real data.
//!
//! Univariate tests (Kolmogorov-Smirnov, Epps-Singleton) have analytic
//! p-values. Multivariate statistics (energy, Friedman-Rafsky, kNN,
//! Wasserstein) get p-values from a seeded permutation test.

mod assignment;
mod multivariate;
mod permutation;
mod univariate;

pub use assignment::{assignment_cost, sinkhorn_cost, EXACT_ASSIGNMENT_LIMIT};
pub use multivariate::{
    energy_stat, fr_stat, knn_stat, minimum_spanning_tree, wasserstein_1d, wasserstein_dist,
    WassersteinMethod,
};
pub use permutation::{permutation_test, permutation_test_with, PooledStatistic, Statistic};
pub use univariate::{es_test, kolmogorov_sf, ks_test};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};

/// Rows of one sample: `m x k` with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    rows: Array2<f64>,
}

impl SampleMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(arg_err("a sample needs at least one row and one column"));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(arg_err("sample entries must be finite"));
        }
        Ok(SampleMatrix { rows })
    }

    /// One column.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((values.len(), 1), values.to_vec()).map_err(|e| shape_err(e.to_string()))?)
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// `self` stacked over `other`.
    pub fn pooled(&self, other: &SampleMatrix) -> Result<Array2<f64>> {
        check_same_dim(self, other)?;
        ndarray::concatenate(Axis(0), &[self.rows.view(), other.rows.view()])
            .map_err(|e| shape_err(e.to_string()))
    }
}

pub(crate) fn check_same_dim(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(shape_err(format!(
            "samples have {} and {} columns",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Which tail of the permutation distribution counts as evidence of a
/// difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Large statistics mean the samples differ.
    Greater,
    /// Small statistics mean the samples differ (Friedman-Rafsky runs).
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    /// 0 for analytic tests.
    pub permutations: usize,
    pub seed: u64,
    /// Absent for analytic tests.
    pub orientation: Option<Orientation>,
    /// `analytic`, `exact` or `entropic`.
    pub method: String,
}

impl TestReport {
    pub(crate) fn analytic(test: &str, statistic: f64, p_value: f64) -> Self {
        TestReport {
            test: test.to_string(),
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            permutations: 0,
            seed: 0,
            orientation: None,
            method: "analytic".to_string(),
        }
    }
}
