//! Deep sigmoidal flow.
//!
//! Each layer maps `x` to `logit(sum_j w_j * sigmoid(a_j * x + b_j))` with
//! `a_j > 0` and `w` on the simplex, which is strictly increasing and onto the
//! real line. The stack maps an outcome value to a latent value whose base
//! distribution is standard normal; sampling inverts the stack.
//!
//! All quantities are evaluated in log space:
//!
//! ```text
//! LS = lse_j(ln w_j + ln sig(u_j))        ln s
//! LC = lse_j(ln w_j + ln sig(-u_j))       ln (1 - s)
//! LD = lse_j(ln w_j + ln a_j + ln sig(u_j) + ln sig(-u_j))
//! y = LS - LC,   ln dy/dx = LD - LS - LC
//! ```

use rand::Rng;
use rand_distr::StandardNormal;

use super::Head;
use crate::error::{arg_err, Error, Result};
use crate::math::{log_sigmoid, logsumexp, sigmoid, softplus, std_normal_log_pdf, std_normal_quantile, LOGIT_CAP};
use crate::quadrature::{gauss_legendre, integrate_composite_pair};

/// Probability left outside the integration range in each tail.
const TAIL_MASS: f64 = 1e-6;
const MAX_BRACKET_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLayer {
    slopes: Vec<f64>,
    offsets: Vec<f64>,
    log_weights: Vec<f64>,
}

impl FlowLayer {
    pub fn new(slopes: Vec<f64>, offsets: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = slopes.len();
        if n == 0 || offsets.len() != n || weights.len() != n {
            return Err(arg_err("flow layer parameter vectors must be non-empty and equally long"));
        }
        if slopes.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(arg_err("flow slopes must be finite and strictly positive"));
        }
        if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(arg_err("flow mixing weights must be nonnegative and sum to 1"));
        }
        Ok(FlowLayer {
            slopes,
            offsets,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
        })
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    fn forward(&self, x: f64, buf: &mut LayerBuf) -> (f64, f64) {
        buf.clear();
        for ((&a, &b), &lw) in self.slopes.iter().zip(&self.offsets).zip(&self.log_weights) {
            let u = a * x + b;
            let lsp = log_sigmoid(u);
            let lsn = log_sigmoid(-u);
            buf.ls.push(lw + lsp);
            buf.lc.push(lw + lsn);
            buf.ld.push(lw + a.ln() + lsp + lsn);
        }
        let ls = logsumexp(&buf.ls);
        let lc = logsumexp(&buf.lc);
        let ld = logsumexp(&buf.ld);
        (ls - lc, ld - ls - lc)
    }
}

#[derive(Default)]
struct LayerBuf {
    ls: Vec<f64>,
    lc: Vec<f64>,
    ld: Vec<f64>,
}

impl LayerBuf {
    fn clear(&mut self) {
        self.ls.clear();
        self.lc.clear();
        self.ld.clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidalFlowHead {
    layers: Vec<FlowLayer>,
}

impl SigmoidalFlowHead {
    pub fn new(layers: Vec<FlowLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(arg_err("a sigmoidal flow needs at least one layer"));
        }
        Ok(SigmoidalFlowHead { layers })
    }

    /// Raw layout per layer: `units` slope logits (softplus), `units`
    /// offsets, `units` weight logits (softmax).
    pub fn from_raw(raw: &[f64], n_layers: usize, units: usize) -> Self {
        assert_eq!(raw.len(), 3 * n_layers * units, "flow raw parameter length");
        let layers = raw
            .chunks(3 * units)
            .map(|chunk| {
                let slopes = chunk[..units]
                    .iter()
                    .map(|&r| softplus(r.max(-LOGIT_CAP)))
                    .collect();
                let offsets = chunk[units..2 * units].to_vec();
                let mut log_weights = chunk[2 * units..].to_vec();
                crate::math::log_softmax(&mut log_weights);
                FlowLayer {
                    slopes,
                    offsets,
                    log_weights,
                }
            })
            .collect();
        SigmoidalFlowHead { layers }
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    /// Forward map with the log of its derivative.
    pub fn transform(&self, x: f64) -> (f64, f64) {
        let mut buf = LayerBuf::default();
        let mut y = x;
        let mut log_det = 0.0;
        for layer in &self.layers {
            let (next, ld) = layer.forward(y, &mut buf);
            y = next;
            log_det += ld;
        }
        (y, log_det)
    }

    /// Inverse of [`transform`](Self::transform): safeguarded Newton inside
    /// a bisection bracket.
    pub fn invert(&self, target: f64) -> Result<f64> {
        if !target.is_finite() {
            return Err(Error::Numeric(format!("cannot invert non-finite value {target}")));
        }
        let f = |x: f64| self.transform(x).0;
        let mut lo: f64 = -1.0;
        let mut hi: f64 = 1.0;
        let mut doublings = 0;
        while f(lo) > target {
            hi = hi.min(lo);
            lo *= 2.0;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS {
                return Err(Error::Numeric("flow inversion: lower bracket expansion failed".into()));
            }
        }
        doublings = 0;
        while f(hi) < target {
            lo = lo.max(hi);
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS {
                return Err(Error::Numeric("flow inversion: upper bracket expansion failed".into()));
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..500 {
            let (y, log_det) = self.transform(x);
            let r = y - target;
            if r.abs() <= 1e-12 {
                return Ok(x);
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if hi - lo <= f64::EPSILON * x.abs().max(1e-300) * 2.0 {
                return Ok(x);
            }
            let step = r / log_det.exp();
            let newton = x - step;
            x = if newton > lo && newton < hi && step.is_finite() {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Ok(x)
    }

    pub fn invert_many(&self, targets: &[f64]) -> Result<Vec<f64>> {
        targets.iter().map(|&t| self.invert(t)).collect()
    }

    /// Outcome-scale interval holding all but `1e-6` of the mass in each tail.
    pub fn quantile_range(&self) -> Result<(f64, f64)> {
        let q = std_normal_quantile(TAIL_MASS);
        Ok((self.invert(q)?, self.invert(-q)?))
    }

    /// Integrates `g(x) * density(x)` over the quantile range with
    /// composite Gauss-Legendre (16-point panels), refining until the
    /// captured mass is within `1e-5` of its nominal value.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> Result<(f64, f64)> {
        let (lo, hi) = self.quantile_range()?;
        let expected = 1.0 - 2.0 * TAIL_MASS;
        let rule = gauss_legendre(16);
        let mut best = None;
        for panels in [16, 64, 256, 1024] {
            let (mass, moment) = integrate_composite_pair(
                |x| {
                    let density = self.log_prob(x).exp();
                    (density, g(x) * density)
                },
                lo,
                hi,
                panels,
                &rule,
            );
            let err = (mass - expected).abs();
            if err <= 1e-5 {
                return Ok((mass, moment));
            }
            if err <= 1e-3 {
                best = Some((mass, moment));
            }
        }
        best.ok_or_else(|| Error::Numeric("flow quadrature did not converge".into()))
    }

    /// Gradient of ln p(value) w.r.t. the raw parameter vector.
    pub(crate) fn log_prob_grad(raw: &[f64], n_layers: usize, units: usize, value: f64, grad: &mut [f64]) -> f64 {
        struct Cache {
            x: f64,
            u: Vec<f64>,
            p: Vec<f64>,
            q: Vec<f64>,
            r: Vec<f64>,
        }
        let head = SigmoidalFlowHead::from_raw(raw, n_layers, units);
        let mut caches = Vec::with_capacity(n_layers);
        let mut buf = LayerBuf::default();
        let mut x = value;
        let mut total_log_det = 0.0;
        for layer in &head.layers {
            let (y, ld) = layer.forward(x, &mut buf);
            let ls = logsumexp(&buf.ls);
            let lc = logsumexp(&buf.lc);
            let lds = logsumexp(&buf.ld);
            caches.push(Cache {
                x,
                u: layer
                    .slopes
                    .iter()
                    .zip(&layer.offsets)
                    .map(|(a, b)| a * x + b)
                    .collect(),
                p: buf.ls.iter().map(|v| (v - ls).exp()).collect(),
                q: buf.lc.iter().map(|v| (v - lc).exp()).collect(),
                r: buf.ld.iter().map(|v| (v - lds).exp()).collect(),
            });
            x = y;
            total_log_det += ld;
        }
        let z = x;
        let log_prob = std_normal_log_pdf(z) + total_log_det;

        let mut g_x = -z;
        for (l, (layer, c)) in head.layers.iter().zip(&caches).enumerate().rev() {
            let offset = l * 3 * units;
            let (d_ls, d_lc, d_ld) = (g_x - 1.0, -g_x - 1.0, 1.0);
            let mut g_in = 0.0;
            let mut g_logw = vec![0.0; units];
            for j in 0..units {
                let s = sigmoid(c.u[j]);
                let sn = sigmoid(-c.u[j]);
                let g_u = d_ls * c.p[j] * sn - d_lc * c.q[j] * s + d_ld * c.r[j] * (sn - s);
                g_logw[j] = d_ls * c.p[j] + d_lc * c.q[j] + d_ld * c.r[j];
                let a = layer.slopes[j];
                g_in += g_u * a;
                let g_a = g_u * c.x + d_ld * c.r[j] / a;
                let raw_a = raw[offset + j];
                grad[offset + j] = if raw_a < -LOGIT_CAP { 0.0 } else { g_a * sigmoid(raw_a) };
                grad[offset + units + j] = g_u;
            }
            let total: f64 = g_logw.iter().sum();
            for j in 0..units {
                grad[offset + 2 * units + j] = g_logw[j] - layer.log_weights[j].exp() * total;
            }
            g_x = g_in;
        }
        log_prob
    }
}

impl Head for SigmoidalFlowHead {
    fn log_prob(&self, value: f64) -> f64 {
        let (z, log_det) = self.transform(value);
        std_normal_log_pdf(z) + log_det
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        // Bracket expansion covers every finite target; a failure here would
        // mean non-finite parameters.
        self.invert(z).unwrap_or(f64::NAN)
    }

    fn mean(&self) -> Result<f64> {
        let (mass, moment) = self.integrate(|x| x)?;
        Ok(moment / mass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn random_head(seed: u64, layers: usize, units: usize) -> SigmoidalFlowHead {
        let mut rng = rng_from_seed(seed);
        let raw: Vec<f64> = (0..3 * layers * units)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        SigmoidalFlowHead::from_raw(&raw, layers, units)
    }

    #[test]
    fn single_unit_identity() {
        let layer = FlowLayer::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let head = SigmoidalFlowHead::new(vec![layer]).unwrap();
        for z in [-5.0, -0.3, 0.0, 1.7, 8.0] {
            let (y, ld) = head.transform(z);
            assert!((y - z).abs() < 1e-12);
            assert!(ld.abs() < 1e-12);
            assert!((head.invert(y).unwrap() - z).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_head_inverts_midpoint_to_zero() {
        let layer = FlowLayer::new(vec![0.5, 2.0], vec![1.0, -1.0], vec![0.5, 0.5]).unwrap();
        let head = SigmoidalFlowHead::new(vec![layer.clone(), layer]).unwrap();
        assert!(head.transform(0.0).0.abs() < 1e-15);
        assert!(head.invert(0.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn monotone_on_dense_grid() {
        for seed in 0..50 {
            let head = random_head(seed, 3, 4);
            let mut prev = f64::NEG_INFINITY;
            for i in 0..10_000 {
                let x = -10.0 + 20.0 * i as f64 / 9999.0;
                let y = head.transform(x).0;
                assert!(y > prev, "seed {seed} not increasing at {x}");
                prev = y;
            }
        }
    }

    #[test]
    fn log_det_matches_finite_differences() {
        for seed in 0..20 {
            let head = random_head(seed + 100, 2, 5);
            for &x in &[-2.5, -0.4, 0.0, 0.9, 3.1] {
                let h = 1e-5;
                let fd = (head.transform(x + h).0 - head.transform(x - h).0) / (2.0 * h);
                let analytic = head.transform(x).1.exp();
                assert!((fd - analytic).abs() / analytic < 1e-5, "seed {seed} x {x}");
            }
        }
    }

    #[test]
    fn inversion_round_trip_and_bisection_oracle() {
        let head = random_head(7, 3, 6);
        let mut rng = rng_from_seed(8);
        let targets: Vec<f64> = (0..100).map(|_| rng.random_range(-6.0..6.0)).collect();
        let inverted = head.invert_many(&targets).unwrap();
        for (&t, &x) in targets.iter().zip(&inverted) {
            assert!((head.transform(x).0 - t).abs() <= 1e-10);
            // Plain bisection oracle.
            let (mut lo, mut hi) = (-1e6, 1e6);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if head.transform(mid).0 < t {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((x - 0.5 * (lo + hi)).abs() < 1e-8, "target {t}: newton {x} vs bisection {}", 0.5 * (lo + hi));
        }
        for z in [-3.0, 0.2, 4.4] {
            let y = head.transform(z).0;
            assert!((head.invert(y).unwrap() - z).abs() < 1e-8);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        for seed in 0..30 {
            let head = random_head(seed + 200, 2, 4);
            let (mass, _) = head.integrate(|_| 1.0).unwrap();
            assert!((mass - 1.0).abs() < 1e-3, "seed {seed}: mass {mass}");
        }
    }

    #[test]
    fn mean_matches_monte_carlo() {
        let head = random_head(42, 2, 4);
        let mean = head.mean().unwrap();
        let mut rng = rng_from_seed(43);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = head.sample(&mut rng);
            s += v;
            s2 += v * v;
        }
        let mc = s / n as f64;
        let se = ((s2 / n as f64 - mc * mc) / n as f64).sqrt();
        assert!((mc - mean).abs() < 3.0 * se, "quadrature {mean} vs MC {mc} (se {se})");
    }

    #[test]
    fn invalid_layers_are_rejected() {
        assert!(FlowLayer::new(vec![0.0], vec![0.0], vec![1.0]).is_err());
        assert!(FlowLayer::new(vec![1.0], vec![0.0], vec![0.7]).is_err());
        assert!(SigmoidalFlowHead::new(vec![]).is_err());
    }
}
