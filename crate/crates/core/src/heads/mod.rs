//! Distribution heads: maps from raw network outputs to log-densities,
//! samples and means for the treatment and the outcome.
//!
//! Every head also exposes the gradient of its log-density with respect to
//! the raw network outputs it was built from, which is what training needs.

mod bernoulli;
mod flow;
mod gaussian;
mod mixture;

pub use bernoulli::BernoulliHead;
pub use flow::{FlowLayer, SigmoidalFlowHead};
pub use gaussian::GaussianHead;
pub use mixture::{AtomMixtureHead, MixtureDraw, ATOM_TOLERANCE};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Common behaviour of one-dimensional heads.
pub trait Head {
    fn log_prob(&self, value: f64) -> f64;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
    fn mean(&self) -> Result<f64>;
}

/// Continuous outcome component.
#[derive(Debug, Clone, PartialEq)]
pub enum ContinuousHead {
    Gaussian(GaussianHead),
    Flow(SigmoidalFlowHead),
}

impl Head for ContinuousHead {
    fn log_prob(&self, value: f64) -> f64 {
        match self {
            ContinuousHead::Gaussian(h) => h.log_prob(value),
            ContinuousHead::Flow(h) => h.log_prob(value),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ContinuousHead::Gaussian(h) => h.sample(rng),
            ContinuousHead::Flow(h) => h.sample(rng),
        }
    }

    fn mean(&self) -> Result<f64> {
        match self {
            ContinuousHead::Gaussian(h) => h.mean(),
            ContinuousHead::Flow(h) => h.mean(),
        }
    }
}

/// Outcome head: a continuous density, optionally mixed with point masses.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeHead {
    Continuous(ContinuousHead),
    Mixture(AtomMixtureHead),
}

impl OutcomeHead {
    /// Draw that remembers which atom (if any) was selected.
    pub fn sample_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MixtureDraw {
        match self {
            OutcomeHead::Continuous(h) => MixtureDraw::Continuous(h.sample(rng)),
            OutcomeHead::Mixture(m) => m.sample_draw(rng),
        }
    }
}

impl Head for OutcomeHead {
    fn log_prob(&self, value: f64) -> f64 {
        match self {
            OutcomeHead::Continuous(h) => h.log_prob(value),
            OutcomeHead::Mixture(h) => h.log_prob(value),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            OutcomeHead::Continuous(h) => h.sample(rng),
            OutcomeHead::Mixture(h) => h.sample(rng),
        }
    }

    fn mean(&self) -> Result<f64> {
        match self {
            OutcomeHead::Continuous(h) => h.mean(),
            OutcomeHead::Mixture(h) => h.mean(),
        }
    }
}

/// Family of the continuous outcome component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContinuousFamily {
    Gaussian,
    Flow { layers: usize, units: usize },
}

impl ContinuousFamily {
    pub fn n_outputs(&self) -> usize {
        match *self {
            ContinuousFamily::Gaussian => 2,
            ContinuousFamily::Flow { layers, units } => 3 * layers * units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ContinuousFamily::Flow { layers, units } if layers == 0 || units == 0 => Err(arg_err(
                "a sigmoidal flow needs at least one layer and one unit",
            )),
            _ => Ok(()),
        }
    }

    pub fn build(&self, raw: &[f64]) -> ContinuousHead {
        match *self {
            ContinuousFamily::Gaussian => ContinuousHead::Gaussian(GaussianHead::from_raw(raw)),
            ContinuousFamily::Flow { layers, units } => {
                ContinuousHead::Flow(SigmoidalFlowHead::from_raw(raw, layers, units))
            }
        }
    }

    /// Log-density at `value` and its gradient w.r.t. `raw` (written to `grad`).
    pub fn log_prob_grad(&self, raw: &[f64], value: f64, grad: &mut [f64]) -> f64 {
        match *self {
            ContinuousFamily::Gaussian => GaussianHead::log_prob_grad(raw, value, grad),
            ContinuousFamily::Flow { layers, units } => {
                SigmoidalFlowHead::log_prob_grad(raw, layers, units, value, grad)
            }
        }
    }
}

/// Parameterization of an outcome head from a network output vector.
///
/// Layout of the raw vector: the continuous component's parameters first,
/// followed by `K + 1` mixture logits when `K` atoms are declared (logit 0 is
/// the continuous branch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParam {
    pub continuous: ContinuousFamily,
    /// Atom locations on the scale the head operates on.
    pub atoms: Vec<f64>,
}

impl OutcomeParam {
    pub fn n_outputs(&self) -> usize {
        let mix = if self.atoms.is_empty() {
            0
        } else {
            self.atoms.len() + 1
        };
        self.continuous.n_outputs() + mix
    }

    pub fn build(&self, raw: &[f64]) -> OutcomeHead {
        let nc = self.continuous.n_outputs();
        let cont = self.continuous.build(&raw[..nc]);
        if self.atoms.is_empty() {
            OutcomeHead::Continuous(cont)
        } else {
            OutcomeHead::Mixture(AtomMixtureHead::from_logits(
                self.atoms.clone(),
                &raw[nc..],
                cont,
            ))
        }
    }

    /// Log-likelihood of one observation and its gradient w.r.t. `raw`.
    /// `atom` is the index of the atom the observation sits on, if any.
    pub fn log_prob_grad(&self, raw: &[f64], value: f64, atom: Option<usize>, grad: &mut [f64]) -> f64 {
        let nc = self.continuous.n_outputs();
        if self.atoms.is_empty() {
            return self.continuous.log_prob_grad(raw, value, grad);
        }
        let (cont_grad, mix_grad) = grad.split_at_mut(nc);
        let mut log_w = raw[nc..].to_vec();
        crate::math::log_softmax(&mut log_w);
        // d log pi_k / d logit_j = 1{j = k} - pi_j
        let branch = atom.map_or(0, |j| j + 1);
        for (j, g) in mix_grad.iter_mut().enumerate() {
            *g = -log_w[j].exp();
        }
        mix_grad[branch] += 1.0;
        match atom {
            Some(_) => {
                cont_grad.iter_mut().for_each(|g| *g = 0.0);
                log_w[branch]
            }
            None => log_w[0] + self.continuous.log_prob_grad(&raw[..nc], value, cont_grad),
        }
    }

    /// Index of the atom equal to `value` within `tol`.
    pub fn atom_index(&self, value: f64, tol: f64) -> Option<usize> {
        self.atoms.iter().position(|&a| (a - value).abs() <= tol)
    }
}
