//! The generative data-generating process: a TARNet-structured model of
//! `p(T | W)` and `p(Y | T, W)` with covariates resampled from the training
//! data, ground-truth estimands, and knobs that modify one mechanism at a
//! time.

mod fit;
mod io;
mod network;

pub use fit::{fit, split_indices, CandidateSummary, FitConfig, SplitIndices};
pub use io::{from_json, load, save, to_json, FORMAT_VERSION};
pub use network::{Architecture, TarNet, TarNetGrads};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Preprocessor};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::heads::{BernoulliHead, ContinuousFamily, Head, MixtureDraw, OutcomeHead, OutcomeParam};
use crate::math::{running_mean, sigmoid, LOGIT_CAP};
use crate::nn::{Activation, Layer, Mlp, MlpParams, MlpSpec};
use crate::rng::rng_from_seed;

/// Modifications of the fitted mechanisms. `(1, 0, 1)` leaves the model
/// unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnobConfig {
    /// Multiplies the treatment logit; 0 makes every propensity 0.5.
    pub positivity_alpha: f64,
    /// Added to `mu(1, w)`.
    pub effect_delta: f64,
    /// Scales IATE deviations from the pre-knob ATE; 0 gives a constant
    /// effect.
    pub heterogeneity_lambda: f64,
}

impl Default for KnobConfig {
    fn default() -> Self {
        KnobConfig {
            positivity_alpha: 1.0,
            effect_delta: 0.0,
            heterogeneity_lambda: 1.0,
        }
    }
}

impl KnobConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = self.positivity_alpha.is_finite()
            && self.effect_delta.is_finite()
            && self.heterogeneity_lambda.is_finite();
        if !finite || self.positivity_alpha < 0.0 || self.heterogeneity_lambda < 0.0 {
            return Err(arg_err(format!(
                "knobs must be finite with alpha >= 0 and lambda >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == KnobConfig::default()
    }

    fn outcome_identity(&self) -> bool {
        self.effect_delta == 0.0 && self.heterogeneity_lambda == 1.0
    }
}

/// Ground-truth estimands over a set of covariate rows (original scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ate: f64,
    pub iate: Vec<f64>,
    pub propensity: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitMetadata {
    pub seed: u64,
    pub architecture: Option<Architecture>,
    pub epochs: usize,
    /// Mean per-row validation log-likelihood on the preprocessed scale.
    pub validation_log_likelihood: f64,
    pub validation_trajectory: Vec<f64>,
    pub gate_p_value: Option<f64>,
    pub candidates: Vec<CandidateSummary>,
    pub split: Option<SplitIndices>,
}

/// Linear map `intercept + coefficients . w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub preprocess: Preprocessor,
    pub network: TarNet,
    /// Head parameterization; atom locations on the preprocessed scale.
    pub outcome: OutcomeParam,
    /// Atom locations on the original scale.
    pub atoms: Vec<f64>,
    /// Training covariates on the original scale; `W` is resampled from these.
    #[serde(with = "matrix_repr")]
    pub covariates: Array2<f64>,
    pub columns: Vec<String>,
    pub knobs: KnobConfig,
    /// Pre-knob ATE over the training covariates, set when the
    /// heterogeneity knob is active.
    pub reference_ate: Option<f64>,
    pub metadata: FitMetadata,
}

impl GenerativeModel {
    pub fn from_parts(
        preprocess: Preprocessor,
        network: TarNet,
        family: ContinuousFamily,
        atoms: Vec<f64>,
        covariates: Array2<f64>,
        columns: Vec<String>,
    ) -> Result<Self> {
        family.validate()?;
        let scaled_atoms = atoms.iter().map(|&a| preprocess.y.forward(a)).collect();
        let model = GenerativeModel {
            preprocess,
            network,
            outcome: OutcomeParam {
                continuous: family,
                atoms: scaled_atoms,
            },
            atoms,
            covariates,
            columns,
            knobs: KnobConfig::default(),
            reference_ate: None,
            metadata: FitMetadata::default(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Hand-specified linear model on unscaled data: logistic propensity
    /// and Gaussian outcomes with linear means and fixed log-variances.
    pub fn linear_gaussian(
        covariates: Array2<f64>,
        treatment: LinearHead,
        outcome: [LinearHead; 2],
        log_variance: [f64; 2],
    ) -> Result<Self> {
        let d = covariates.ncols();
        let heads = [&treatment, &outcome[0], &outcome[1]];
        if heads.iter().any(|h| h.coefficients.len() != d) {
            return Err(shape_err(format!("linear heads need {d} coefficients")));
        }
        let single = |rows: Vec<(&[f64], f64)>| -> Result<Mlp> {
            let k = rows.len();
            let spec = MlpSpec::new(vec![d], Activation::Relu, k)?;
            let weights = Array2::from_shape_fn((k, d), |(r, j)| rows[r].0[j]);
            let bias = Array1::from_iter(rows.iter().map(|r| r.1));
            Mlp::new(spec, MlpParams {
                layers: vec![Layer { weights, bias }],
            })
        };
        let zeros = vec![0.0; d];
        let t_net = single(vec![(&treatment.coefficients, treatment.intercept)])?;
        let o0 = single(vec![(&outcome[0].coefficients, outcome[0].intercept), (&zeros, log_variance[0])])?;
        let o1 = single(vec![(&outcome[1].coefficients, outcome[1].intercept), (&zeros, log_variance[1])])?;
        let network = TarNet::new(None, t_net, [o0, o1])?;
        let columns = (0..d).map(|j| format!("w{j}")).collect();
        Self::from_parts(
            Preprocessor::identity(d),
            network,
            ContinuousFamily::Gaussian,
            Vec::new(),
            covariates,
            columns,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.covariates.ncols();
        if self.network.input_dim() != d || self.preprocess.w.len() != d || self.columns.len() != d {
            return Err(shape_err("covariate width disagrees across model components"));
        }
        if self.covariates.nrows() == 0 {
            return Err(arg_err("model has no training covariates"));
        }
        if self.network.outcome_outputs() != self.outcome.n_outputs() {
            return Err(shape_err("outcome nets do not match the head parameterization"));
        }
        if self.atoms.len() != self.outcome.atoms.len() {
            return Err(shape_err("atom lists disagree"));
        }
        self.knobs.validate()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    /// Copy of the model with `knobs` in force. Knobs are relative to the
    /// fitted mechanisms, so earlier settings are replaced, not composed.
    pub fn apply_knobs(&self, knobs: KnobConfig) -> Result<GenerativeModel> {
        knobs.validate()?;
        let mut out = self.clone();
        out.knobs = knobs;
        out.reference_ate = if knobs.heterogeneity_lambda != 1.0 {
            let base = self.apply_knobs_unchecked(KnobConfig::default());
            Some(base.ground_truth(&self.covariates)?.ate)
        } else {
            None
        };
        Ok(out)
    }

    fn apply_knobs_unchecked(&self, knobs: KnobConfig) -> GenerativeModel {
        let mut out = self.clone();
        out.knobs = knobs;
        out.reference_ate = None;
        out
    }

    fn scaled(&self, w: &Array2<f64>) -> Result<Array2<f64>> {
        self.preprocess.transform_w(w)
    }

    fn row_matrix(&self, w_row: &[f64]) -> Result<Array2<f64>> {
        if w_row.len() != self.n_covariates() {
            return Err(shape_err(format!(
                "covariate row has length {}, model expects {}",
                w_row.len(),
                self.n_covariates()
            )));
        }
        Ok(Array2::from_shape_vec((1, w_row.len()), w_row.to_vec()).expect("row shape"))
    }

    fn knobbed_propensity(&self, logit: f64) -> f64 {
        let capped = BernoulliHead::new(logit).logit();
        let alpha = self.knobs.positivity_alpha;
        let scaled = if alpha == 1.0 { capped } else { alpha * capped };
        sigmoid(scaled.clamp(-LOGIT_CAP, LOGIT_CAP))
    }

    pub fn propensity(&self, w_row: &[f64]) -> Result<f64> {
        Ok(self.propensities(&self.row_matrix(w_row)?)?[0])
    }

    pub fn propensities(&self, w: &Array2<f64>) -> Result<Vec<f64>> {
        let (logits, _) = self.network.heads(self.scaled(w)?.view())?;
        Ok(logits.iter().map(|&l| self.knobbed_propensity(l)).collect())
    }

    /// Outcome head for arm `t` at `w_row`, on the preprocessed scale and
    /// without outcome knobs.
    pub fn outcome_head(&self, t: u8, w_row: &[f64]) -> Result<OutcomeHead> {
        let arm = arm_index(t)?;
        let x = self.scaled(&self.row_matrix(w_row)?)?;
        let (_, raw) = self.network.heads(x.view())?;
        Ok(self.outcome.build(raw[arm].row(0).as_slice().expect("standard layout")))
    }

    fn base_mean(&self, raw_row: &[f64]) -> Result<f64> {
        let scaled = self.outcome.build(raw_row).mean()?;
        Ok(self.preprocess.y.inverse(scaled))
    }

    /// `(mu0, mu1)` without knobs for every row of scaled input.
    fn base_means(&self, x: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, raw) = self.network.heads(x)?;
        let pairs = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let m0 = self.base_mean(raw[0].row(i).as_slice().expect("standard layout"))?;
                let m1 = self.base_mean(raw[1].row(i).as_slice().expect("standard layout"))?;
                Ok((m0, m1))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        Ok(pairs.into_iter().unzip())
    }

    fn reference_ate(&self) -> Result<f64> {
        self.reference_ate
            .ok_or_else(|| Error::Corrupt("heterogeneity knob set without a reference ATE".into()))
    }

    /// Knob-adjusted `(mu1, iate)` from base means.
    fn adjust(&self, mu0: f64, mu1: f64) -> Result<(f64, f64)> {
        let KnobConfig {
            effect_delta: delta,
            heterogeneity_lambda: lambda,
            ..
        } = self.knobs;
        if lambda == 1.0 {
            let m1 = if delta == 0.0 { mu1 } else { mu1 + delta };
            Ok((m1, m1 - mu0))
        } else {
            let tau_bar = self.reference_ate()?;
            let iate = tau_bar + lambda * ((mu1 - mu0) - tau_bar) + delta;
            Ok((mu0 + iate, iate))
        }
    }

    /// Mean outcome of arm `t` at `w_row` on the original scale, with
    /// outcome knobs applied.
    pub fn mu(&self, t: u8, w_row: &[f64]) -> Result<f64> {
        let arm = arm_index(t)?;
        let x = self.scaled(&self.row_matrix(w_row)?)?;
        let (m0, m1) = self.base_means(x.view())?;
        if arm == 0 {
            return Ok(m0[0]);
        }
        Ok(self.adjust(m0[0], m1[0])?.0)
    }

    pub fn ground_truth(&self, w: &Array2<f64>) -> Result<GroundTruth> {
        if w.nrows() == 0 {
            return Err(arg_err("ground truth needs at least one covariate row"));
        }
        let x = self.scaled(w)?;
        let propensity = self.propensities(w)?;
        let (mu0, base1) = self.base_means(x.view())?;
        let mut mu1 = Vec::with_capacity(mu0.len());
        let mut iate = Vec::with_capacity(mu0.len());
        for (&m0, &m1) in mu0.iter().zip(&base1) {
            let (a, b) = self.adjust(m0, m1)?;
            mu1.push(a);
            iate.push(b);
        }
        Ok(GroundTruth {
            ate: running_mean(&iate),
            iate,
            propensity,
            mu0,
            mu1,
        })
    }

    /// Ancestral sample of `n` units: covariate rows resampled with
    /// replacement from the training covariates, then `T` and `Y`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(arg_err("sample size must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.covariates.nrows())).collect();
        let w = self.covariates.select(ndarray::Axis(0), &rows);
        let (t, y) = self.draw(&w, &mut rng)?;
        Dataset::new(w, t, y)?
            .with_atoms(self.atoms.clone())?
            .with_columns(self.columns.clone())
    }

    /// `T` and `Y` drawn at the given covariate rows.
    pub fn sample_at(&self, w: &Array2<f64>, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.draw(w, &mut rng_from_seed(seed))
    }

    fn draw<R: Rng>(&self, w: &Array2<f64>, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.scaled(w)?;
        let (logits, raw) = self.network.heads(x.view())?;
        let n = w.nrows();
        let mut t = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let p = self.knobbed_propensity(logits[i]);
            let arm = if rng.random::<f64>() < p { 1 } else { 0 };
            let raw_row = raw[arm].row(i);
            let raw_row = raw_row.as_slice().expect("standard layout");
            let value = match self.outcome.build(raw_row).sample_draw(rng) {
                MixtureDraw::Continuous(v) => self.preprocess.y.inverse(v),
                MixtureDraw::Atom(j) => self.atoms[j],
            };
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite outcome sampled at row {i}")));
            }
            let value = if arm == 1 && !self.knobs.outcome_identity() {
                value + self.treated_shift(raw[0].row(i).as_slice().expect("standard layout"), raw_row)?
            } else {
                value
            };
            t.push(arm as f64);
            y.push(value);
        }
        Ok((t, y))
    }

    /// Shift applied to `T = 1` draws so their mean becomes the knobbed
    /// `mu(1, w)`.
    fn treated_shift(&self, raw0: &[f64], raw1: &[f64]) -> Result<f64> {
        if self.knobs.heterogeneity_lambda == 1.0 {
            return Ok(self.knobs.effect_delta);
        }
        let m0 = self.base_mean(raw0)?;
        let m1 = self.base_mean(raw1)?;
        Ok(self.adjust(m0, m1)?.0 - m1)
    }
}

fn arm_index(t: u8) -> Result<usize> {
    match t {
        0 | 1 => Ok(t as usize),
        _ => Err(arg_err(format!("treatment must be 0 or 1, got {t}"))),
    }
}

mod matrix_repr {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        /// Row-major.
        values: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            values: m.iter().copied().collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        Array2::from_shape_vec((r.rows, r.cols), r.values).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;
    use ndarray::array;

    /// mu(t, w) = w + 2t, propensity sigmoid(0.5 w).
    fn hand_model() -> GenerativeModel {
        let w = array![[-1.0], [0.0], [0.5], [2.0]];
        GenerativeModel::linear_gaussian(
            w,
            LinearHead {
                coefficients: vec![0.5],
                intercept: 0.0,
            },
            [
                LinearHead {
                    coefficients: vec![1.0],
                    intercept: 0.0,
                },
                LinearHead {
                    coefficients: vec![1.0],
                    intercept: 2.0,
                },
            ],
            [0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn hand_built_ground_truth() {
        let m = hand_model();
        let gt = m.ground_truth(&m.covariates).unwrap();
        assert_eq!(gt.ate, 2.0);
        assert!(gt.iate.iter().all(|&v| v == 2.0));
        assert_eq!(gt.mu0, vec![-1.0, 0.0, 0.5, 2.0]);
        assert_eq!(m.mu(1, &[0.5]).unwrap(), 2.5);
        assert!((m.propensity(&[2.0]).unwrap() - sigmoid(1.0)).abs() < 1e-15);
        assert!(m.ground_truth(&Array2::zeros((0, 1))).is_err());
        assert!(m.propensity(&[1.0, 2.0]).is_err());
        assert!(m.mu(2, &[0.0]).is_err());
    }

    #[test]
    fn positivity_knob() {
        let m = hand_model();
        let zero = m
            .apply_knobs(KnobConfig {
                positivity_alpha: 0.0,
                ..Default::default()
            })
            .unwrap();
        assert!(zero.propensities(&m.covariates).unwrap().iter().all(|&p| p == 0.5));
        let two = m
            .apply_knobs(KnobConfig {
                positivity_alpha: 2.0,
                ..Default::default()
            })
            .unwrap();
        for w in [-1.0, 0.5, 2.0] {
            let e = m.propensity(&[w]).unwrap();
            let expected = sigmoid(2.0 * logit(e));
            assert!((two.propensity(&[w]).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn effect_and_heterogeneity_knobs() {
        // Heterogeneous version: mu1 = 3w + 1.
        let mut m = hand_model();
        m.network.outcome[1].params.layers[0].weights[[0, 0]] = 3.0;
        m.network.outcome[1].params.layers[0].bias[0] = 1.0;
        let base = m.ground_truth(&m.covariates).unwrap();
        let shifted = m
            .apply_knobs(KnobConfig {
                effect_delta: 1.5,
                ..Default::default()
            })
            .unwrap();
        let gt = shifted.ground_truth(&m.covariates).unwrap();
        assert_eq!(gt.mu0, base.mu0);
        for (a, b) in gt.mu1.iter().zip(&base.mu1) {
            assert_eq!(*a, b + 1.5);
        }
        assert!((gt.ate - base.ate - 1.5).abs() < 1e-12);

        let flat = m
            .apply_knobs(KnobConfig {
                heterogeneity_lambda: 0.0,
                ..Default::default()
            })
            .unwrap();
        let gt = flat.ground_truth(&m.covariates).unwrap();
        assert!(gt.iate.iter().all(|&v| v == gt.ate));
        assert!((gt.ate - base.ate).abs() < 1e-12);
    }

    #[test]
    fn identity_knobs_reproduce_samples() {
        let m = hand_model();
        let same = m.apply_knobs(KnobConfig::default()).unwrap();
        assert_eq!(m.sample(200, 7).unwrap(), same.sample(200, 7).unwrap());
        assert!(m.sample(0, 7).is_err());
    }

    #[test]
    fn knob_shift_moves_treated_samples() {
        let m = hand_model();
        let shifted = m
            .apply_knobs(KnobConfig {
                effect_delta: 10.0,
                ..Default::default()
            })
            .unwrap();
        let a = m.sample(300, 3).unwrap();
        let b = shifted.sample(300, 3).unwrap();
        assert_eq!(a.t, b.t);
        for i in 0..300 {
            let expected = if a.t[i] == 1.0 { a.y[i] + 10.0 } else { a.y[i] };
            assert_eq!(b.y[i], expected);
        }
    }

    #[test]
    fn saturated_treatment_logit() {
        let w = array![[0.0], [1.0]];
        let m = GenerativeModel::linear_gaussian(
            w,
            LinearHead {
                coefficients: vec![0.0],
                intercept: -30.0,
            },
            [
                LinearHead {
                    coefficients: vec![0.0],
                    intercept: 0.0,
                },
                LinearHead {
                    coefficients: vec![0.0],
                    intercept: 0.0,
                },
            ],
            [0.0, 0.0],
        )
        .unwrap();
        let ds = m.sample(2000, 1).unwrap();
        assert!(ds.t.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn sample_mean_matches_mu() {
        let m = hand_model();
        let w = array![[0.5]];
        let (t, y) = m.sample_at(&w.broadcast((100_000, 1)).unwrap().to_owned(), 11).unwrap();
        let treated: Vec<f64> = y.iter().zip(&t).filter(|(_, &t)| t == 1.0).map(|(y, _)| *y).collect();
        let mean = treated.iter().sum::<f64>() / treated.len() as f64;
        let se = 1.0 / (treated.len() as f64).sqrt();
        assert!((mean - m.mu(1, &[0.5]).unwrap()).abs() < 4.0 * se);
    }
}
