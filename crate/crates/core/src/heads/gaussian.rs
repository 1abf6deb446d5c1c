use rand::Rng;
use rand_distr::StandardNormal;

use super::Head;
use crate::error::Result;
use crate::math::{LN_2PI, LOGIT_CAP};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mean: f64,
    log_variance: f64,
}

impl GaussianHead {
    /// `log_variance` is clamped to +-30.
    pub fn new(mean: f64, log_variance: f64) -> Self {
        GaussianHead {
            mean,
            log_variance: log_variance.clamp(-LOGIT_CAP, LOGIT_CAP),
        }
    }

    pub fn from_raw(raw: &[f64]) -> Self {
        GaussianHead::new(raw[0], raw[1])
    }

    pub fn log_variance(&self) -> f64 {
        self.log_variance
    }

    pub fn std_dev(&self) -> f64 {
        (0.5 * self.log_variance).exp()
    }

    pub(crate) fn log_prob_grad(raw: &[f64], value: f64, grad: &mut [f64]) -> f64 {
        let head = GaussianHead::from_raw(raw);
        let var = head.log_variance.exp();
        let r = value - head.mean;
        grad[0] = r / var;
        grad[1] = if raw[1].abs() >= LOGIT_CAP {
            0.0
        } else {
            -0.5 + 0.5 * r * r / var
        };
        head.log_prob(value)
    }
}

impl Head for GaussianHead {
    fn log_prob(&self, value: f64) -> f64 {
        let r = value - self.mean;
        -0.5 * (LN_2PI + self.log_variance + r * r * (-self.log_variance).exp())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.std_dev() * z
    }

    fn mean(&self) -> Result<f64> {
        Ok(self.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn standard_normal_mode() {
        let h = GaussianHead::new(0.0, 0.0);
        assert!((h.log_prob(0.0) + 0.5 * LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn closed_form_mean() {
        assert_eq!(GaussianHead::new(3.2, 1.0).mean().unwrap(), 3.2);
    }

    #[test]
    fn vanishing_variance_samples_at_mean() {
        let h = GaussianHead::new(5.0, f64::NEG_INFINITY);
        assert_eq!(h.log_variance(), -30.0);
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            assert!((h.sample(&mut rng) - 5.0).abs() < 1e-5);
        }
    }
}
