//! Column standardization and polynomial feature expansions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Per-column `(x - mean) / std` from training data; constant columns are
/// only centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(shape_err(format!(
                "input has {} columns, fitted on {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        let mut out = x.to_owned();
        for ((mut col, m), s) in out.columns_mut().into_iter().zip(&self.mean).zip(&self.scale) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

/// Monomials over the input columns, each a list of column indices with
/// repetition (`[0, 0, 2]` is `x0^2 x2`). Degree-one terms come first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    inputs: usize,
    terms: Vec<Vec<usize>>,
}

impl Expansion {
    pub fn identity(inputs: usize) -> Self {
        Expansion {
            inputs,
            terms: (0..inputs).map(|j| vec![j]).collect(),
        }
    }

    /// Inputs plus `x0 * xj` for every other column.
    pub fn interact_first(inputs: usize) -> Self {
        let mut e = Self::identity(inputs);
        e.terms.extend((1..inputs).map(|j| vec![0, j]));
        e
    }

    /// All monomials of degree 1 to `degree`. Powers above one of a column
    /// with at most two distinct values are affine in that column and are
    /// left out.
    pub fn polynomial(x: ArrayView2<f64>, degree: usize) -> Self {
        let inputs = x.ncols();
        let two_valued: Vec<bool> = x
            .columns()
            .into_iter()
            .map(|c| {
                let mut seen: Vec<f64> = Vec::with_capacity(3);
                for &v in c {
                    if !seen.contains(&v) {
                        seen.push(v);
                        if seen.len() > 2 {
                            return false;
                        }
                    }
                }
                true
            })
            .collect();
        let mut terms = Vec::new();
        let mut current = Vec::new();
        fn rec(start: usize, left: usize, inputs: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            for j in start..inputs {
                current.push(j);
                out.push(current.clone());
                if left > 1 {
                    rec(j, left - 1, inputs, current, out);
                }
                current.pop();
            }
        }
        rec(0, degree, inputs, &mut current, &mut terms);
        terms.retain(|t| t.windows(2).all(|w| w[0] != w[1] || !two_valued[w[0]]));
        terms.sort_by_key(|t| t.len());
        Expansion { inputs, terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs {
            return Err(shape_err(format!(
                "input has {} columns, expansion expects {}",
                x.ncols(),
                self.inputs
            )));
        }
        Ok(Array2::from_shape_fn((x.nrows(), self.terms.len()), |(i, k)| {
            self.terms[k].iter().map(|&j| x[[i, j]]).product()
        }))
    }
}

/// Solution of the symmetric system `a x = b` through its eigendecomposition,
/// dropping eigenvalues below `1e-12` of the largest. Returns the number of
/// dropped directions; zero means the solve was exact.
pub(crate) fn solve_symmetric(a: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = 1e-12 * max;
    let proj = eig.eigenvectors.transpose() * b;
    let mut dropped = 0;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter().zip(eig.eigenvalues.iter()).map(|(p, &l)| {
            if l.abs() > cutoff && max > 0.0 {
                p / l
            } else {
                dropped += 1;
                0.0
            }
        }),
    );
    (&eig.eigenvectors * scaled, dropped)
}

pub(crate) fn to_dmatrix(x: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]])
}
