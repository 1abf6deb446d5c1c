//! Observational datasets `(W, T, Y)` and the column scaling applied before
//! fitting.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};

/// Known conditional means of a semi-synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeMeans {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl PotentialOutcomeMeans {
    pub fn iate(&self) -> Vec<f64> {
        self.mu1.iter().zip(&self.mu0).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n x d` covariates.
    pub w: Array2<f64>,
    /// Treatment indicator, every entry 0 or 1.
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    /// Declared point masses of `Y`.
    pub atoms: Vec<f64>,
    pub columns: Vec<String>,
    pub effects: Option<PotentialOutcomeMeans>,
}

impl Dataset {
    /// Builds and validates a dataset. Column names default to `w0, w1, ...`.
    pub fn new(w: Array2<f64>, t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let columns = (0..w.ncols()).map(|j| format!("w{j}")).collect();
        let ds = Dataset {
            w,
            t,
            y,
            atoms: Vec::new(),
            columns,
            effects: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_atoms(mut self, atoms: Vec<f64>) -> Result<Self> {
        self.atoms = atoms;
        self.validate()?;
        Ok(self)
    }

    pub fn with_columns(mut self, columns: Vec<String>) -> Result<Self> {
        self.columns = columns;
        self.validate()?;
        Ok(self)
    }

    pub fn with_effects(mut self, effects: PotentialOutcomeMeans) -> Result<Self> {
        self.effects = Some(effects);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w.nrows();
        if self.t.len() != n || self.y.len() != n {
            return Err(shape_err(format!(
                "W has {n} rows but T has {} and Y has {}",
                self.t.len(),
                self.y.len()
            )));
        }
        if self.columns.len() != self.w.ncols() {
            return Err(shape_err("one column name per covariate is required"));
        }
        if n == 0 {
            return Err(arg_err("a dataset needs at least one row"));
        }
        if let Some((i, _)) = self.w.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(arg_err(format!("non-finite covariate at row {}, column {}", i.0, i.1)));
        }
        if let Some(i) = self.t.iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(arg_err(format!("treatment at row {i} is {} (must be 0 or 1)", self.t[i])));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(arg_err(format!("non-finite outcome at row {i}")));
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if !a.is_finite() || self.atoms[..i].contains(a) {
                return Err(arg_err("atoms must be finite and distinct"));
            }
        }
        if let Some(e) = &self.effects {
            if e.mu0.len() != n || e.mu1.len() != n {
                return Err(shape_err("mu0/mu1 must have one entry per row"));
            }
        }
        Ok(())
    }

    /// Requirements for fitting models: at least two rows and both
    /// treatment groups present. Sampled datasets need not satisfy them.
    pub fn check_fittable(&self) -> Result<()> {
        self.validate()?;
        if self.n() < 2 {
            return Err(arg_err("a dataset needs at least two rows"));
        }
        let treated = self.t.iter().filter(|&&t| t == 1.0).count();
        if treated == 0 || treated == self.n() {
            return Err(arg_err("both treatment groups must be non-empty"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.w.row(i)
    }

    pub fn treated_fraction(&self) -> f64 {
        self.t.iter().sum::<f64>() / self.n() as f64
    }

    pub fn arm_indices(&self, arm: f64) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == arm).collect()
    }

    /// Rows in the given order, without re-validating group sizes.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            w: self.w.select(Axis(0), idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            atoms: self.atoms.clone(),
            columns: self.columns.clone(),
            effects: self.effects.as_ref().map(|e| PotentialOutcomeMeans {
                mu0: idx.iter().map(|&i| e.mu0[i]).collect(),
                mu1: idx.iter().map(|&i| e.mu1[i]).collect(),
            }),
        }
    }

    /// `(T, Y)` as an `n x 2` matrix.
    pub fn ty_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n(), 2), |(i, j)| if j == 0 { self.t[i] } else { self.y[i] })
    }

    /// `(W, T, Y)` as an `n x (d + 2)` matrix.
    pub fn wty_matrix(&self) -> Array2<f64> {
        let d = self.d();
        Array2::from_shape_fn((self.n(), d + 2), |(i, j)| match j {
            j if j < d => self.w[[i, j]],
            j if j == d => self.t[i],
            _ => self.y[i],
        })
    }
}

/// Values of `y` whose empirical frequency is at least `min_frequency`,
/// ascending. Suggests atoms; the caller decides whether to declare them.
pub fn candidate_atoms(y: &[f64], min_frequency: f64) -> Vec<f64> {
    let sorted = crate::math::sorted_copy(y);
    let threshold = min_frequency * y.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if (j - i) as f64 >= threshold && j - i > 1 {
            out.push(sorted[i]);
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    #[default]
    Standardize,
    Normalize01,
}

/// `x' = (x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub shift: f64,
    pub scale: f64,
}

impl ColumnScale {
    pub const IDENTITY: ColumnScale = ColumnScale {
        shift: 0.0,
        scale: 1.0,
    };

    /// Constant columns are only shifted.
    pub fn fit(values: &[f64], mode: PreprocessMode) -> Self {
        let n = values.len() as f64;
        let (shift, spread) = match mode {
            PreprocessMode::Standardize => {
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
            PreprocessMode::Normalize01 => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            }
        };
        ColumnScale {
            shift,
            scale: if spread > 0.0 && spread.is_finite() { spread } else { 1.0 },
        }
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    #[inline]
    pub fn inverse(&self, x: f64) -> f64 {
        x * self.scale + self.shift
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub mode: PreprocessMode,
    pub w: Vec<ColumnScale>,
    pub y: ColumnScale,
}

impl Preprocessor {
    pub fn fit(mode: PreprocessMode, w: &Array2<f64>, y: &[f64]) -> Self {
        let w_scales = w
            .columns()
            .into_iter()
            .map(|c| ColumnScale::fit(&c.to_vec(), mode))
            .collect();
        Preprocessor {
            mode,
            w: w_scales,
            y: ColumnScale::fit(y, mode),
        }
    }

    pub fn identity(d: usize) -> Self {
        Preprocessor {
            mode: PreprocessMode::Standardize,
            w: vec![ColumnScale::IDENTITY; d],
            y: ColumnScale::IDENTITY,
        }
    }

    pub fn transform_w(&self, w: &Array2<f64>) -> Result<Array2<f64>> {
        if w.ncols() != self.w.len() {
            return Err(shape_err(format!(
                "covariates have {} columns, model expects {}",
                w.ncols(),
                self.w.len()
            )));
        }
        let mut out = w.clone();
        for (mut col, s) in out.columns_mut().into_iter().zip(&self.w) {
            col.mapv_inplace(|v| s.forward(v));
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.w.len() {
            return Err(shape_err(format!(
                "covariate row has length {}, model expects {}",
                row.len(),
                self.w.len()
            )));
        }
        Ok(row.iter().zip(&self.w).map(|(&v, s)| s.forward(v)).collect())
    }
}
