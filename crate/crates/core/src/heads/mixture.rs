use rand::Rng;

use super::{ContinuousHead, Head};
use crate::error::{arg_err, Result};

/// Values within this distance of an atom use the atom branch.
pub const ATOM_TOLERANCE: f64 = 1e-12;

/// Point masses at `atoms` mixed with a continuous density:
/// `p(y) = pi_0 * 1{y not an atom} * p_c(y) + sum_j pi_j * 1{y = a_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomMixtureHead {
    atoms: Vec<f64>,
    /// `weights[0]` is the continuous branch, `weights[j]` atom `j - 1`.
    weights: Vec<f64>,
    continuous: ContinuousHead,
}

/// Result of sampling a mixture branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixtureDraw {
    Continuous(f64),
    Atom(usize),
}

impl AtomMixtureHead {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>, continuous: ContinuousHead) -> Result<Self> {
        if weights.len() != atoms.len() + 1 {
            return Err(arg_err("mixture needs one weight per atom plus the continuous weight"));
        }
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w))
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(arg_err("mixture weights must be probabilities summing to 1"));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !a.is_finite() || atoms[..i].contains(a) {
                return Err(arg_err("atoms must be finite and distinct"));
            }
        }
        Ok(AtomMixtureHead {
            atoms,
            weights,
            continuous,
        })
    }

    pub(crate) fn from_logits(atoms: Vec<f64>, logits: &[f64], continuous: ContinuousHead) -> Self {
        let mut log_w = logits.to_vec();
        crate::math::log_softmax(&mut log_w);
        AtomMixtureHead {
            atoms,
            weights: log_w.iter().map(|l| l.exp()).collect(),
            continuous,
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn continuous(&self) -> &ContinuousHead {
        &self.continuous
    }

    pub fn sample_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MixtureDraw {
        let u: f64 = rng.random();
        let mut acc = self.weights[0];
        if u < acc {
            return MixtureDraw::Continuous(self.continuous.sample(rng));
        }
        for (j, &w) in self.weights[1..].iter().enumerate() {
            acc += w;
            if u < acc {
                return MixtureDraw::Atom(j);
            }
        }
        // Rounding left u above the cumulative sum: take the last branch
        // with positive weight.
        match self.weights.iter().rposition(|&w| w > 0.0) {
            Some(0) | None => MixtureDraw::Continuous(self.continuous.sample(rng)),
            Some(j) => MixtureDraw::Atom(j - 1),
        }
    }
}

impl Head for AtomMixtureHead {
    /// `-inf` for a non-atom value when the continuous weight is zero.
    fn log_prob(&self, value: f64) -> f64 {
        if let Some(j) = self.atoms.iter().position(|&a| (a - value).abs() <= ATOM_TOLERANCE) {
            return self.weights[j + 1].ln();
        }
        if self.weights[0] == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.weights[0].ln() + self.continuous.log_prob(value)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.sample_draw(rng) {
            MixtureDraw::Continuous(v) => v,
            MixtureDraw::Atom(j) => self.atoms[j],
        }
    }

    fn mean(&self) -> Result<f64> {
        let atom_part: f64 = self
            .atoms
            .iter()
            .zip(&self.weights[1..])
            .map(|(a, w)| a * w)
            .sum();
        if self.weights[0] == 0.0 {
            return Ok(atom_part);
        }
        Ok(self.weights[0] * self.continuous.mean()? + atom_part)
    }
}
