use rand::Rng;

use super::Head;
use crate::error::Result;
use crate::math::{log_sigmoid, sigmoid, LOGIT_CAP};

/// Bernoulli head parameterized by a logit, capped at +-30.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliHead {
    logit: f64,
}

impl BernoulliHead {
    pub fn new(logit: f64) -> Self {
        let logit = if logit.is_nan() { 0.0 } else { logit };
        BernoulliHead {
            logit: logit.clamp(-LOGIT_CAP, LOGIT_CAP),
        }
    }

    pub fn logit(&self) -> f64 {
        self.logit
    }

    pub fn prob(&self) -> f64 {
        sigmoid(self.logit)
    }

    /// d/d(raw logit) of ln p(value); zero where the cap is active.
    pub fn log_prob_grad(raw_logit: f64, value: f64) -> (f64, f64) {
        let head = BernoulliHead::new(raw_logit);
        let lp = head.log_prob(value);
        let g = if raw_logit.abs() >= LOGIT_CAP {
            0.0
        } else {
            value - head.prob()
        };
        (lp, g)
    }
}

impl Head for BernoulliHead {
    /// Values >= 0.5 count as 1.
    fn log_prob(&self, value: f64) -> f64 {
        if value >= 0.5 {
            log_sigmoid(self.logit)
        } else {
            log_sigmoid(-self.logit)
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.prob() {
            1.0
        } else {
            0.0
        }
    }

    fn mean(&self) -> Result<f64> {
        Ok(self.prob())
    }
}
