//! TARNet-style network: shared covariate features feeding a treatment net
//! and one outcome net per treatment arm.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::heads::{BernoulliHead, OutcomeParam};
use crate::nn::{Activation, ForwardCache, Mlp, MlpParams, MlpSpec};

/// Depth, width and activation of a candidate network. Zero hidden layers
/// gives the linear baseline: no shared features, linear heads on `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn linear() -> Self {
        Architecture {
            hidden_layers: 0,
            width: 1,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers > 0 && self.width == 0 {
            return Err(arg_err("hidden width must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarNet {
    /// `h(W)`; its output goes through the activation. `None` for the
    /// linear baseline, where the heads read `W` directly.
    pub shared: Option<Mlp>,
    pub treatment: Mlp,
    /// Outcome nets for `T = 0` and `T = 1`.
    pub outcome: [Mlp; 2],
}

/// Gradients with the same layout as [`TarNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct TarNetGrads {
    pub shared: Option<MlpParams>,
    pub treatment: MlpParams,
    pub outcome: [MlpParams; 2],
}

impl TarNetGrads {
    /// Shared, treatment, outcome 0, outcome 1.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.shared.as_ref().map(|p| p.to_flat()).unwrap_or_default();
        out.extend(self.treatment.to_flat());
        out.extend(self.outcome[0].to_flat());
        out.extend(self.outcome[1].to_flat());
        out
    }
}

struct Features {
    values: Array2<f64>,
    shared: Option<(ForwardCache, Array2<f64>)>,
}

impl TarNet {
    pub fn new(shared: Option<Mlp>, treatment: Mlp, outcome: [Mlp; 2]) -> Result<Self> {
        let feat_dim = shared.as_ref().map(|s| s.output_dim());
        let inputs = [treatment.input_dim(), outcome[0].input_dim(), outcome[1].input_dim()];
        if let Some(f) = feat_dim {
            if inputs.iter().any(|&i| i != f) {
                return Err(shape_err("heads must consume the shared feature output"));
            }
        } else if inputs.iter().any(|&i| i != inputs[0]) {
            return Err(shape_err("heads must share one input width"));
        }
        if treatment.output_dim() != 1 {
            return Err(shape_err("the treatment net has a single logit output"));
        }
        if outcome[0].output_dim() != outcome[1].output_dim() {
            return Err(shape_err("both outcome nets must produce the same head"));
        }
        Ok(TarNet {
            shared,
            treatment,
            outcome,
        })
    }

    /// Re-checks every MLP against its spec and the wiring between them.
    pub fn validate(&self) -> Result<()> {
        let nets = self.shared.iter().chain([&self.treatment, &self.outcome[0], &self.outcome[1]]);
        for net in nets {
            Mlp::new(net.spec.clone(), net.params.clone())?;
        }
        TarNet::new(self.shared.clone(), self.treatment.clone(), self.outcome.clone()).map(|_| ())
    }

    pub fn init<R: Rng + ?Sized>(d: usize, arch: Architecture, outcome_outputs: usize, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (shared, head_widths) = if arch.hidden_layers == 0 {
            (None, vec![d])
        } else {
            let mut widths = vec![d];
            widths.extend(std::iter::repeat_n(arch.width, arch.hidden_layers - 1));
            let spec = MlpSpec::new(widths, arch.activation, arch.width)?;
            (Some(Mlp::init(spec, rng)?), vec![arch.width; arch.hidden_layers])
        };
        let treatment = Mlp::init(MlpSpec::new(head_widths.clone(), arch.activation, 1)?, rng)?;
        let o0 = Mlp::init(MlpSpec::new(head_widths.clone(), arch.activation, outcome_outputs)?, rng)?;
        let o1 = Mlp::init(MlpSpec::new(head_widths, arch.activation, outcome_outputs)?, rng)?;
        TarNet::new(shared, treatment, [o0, o1])
    }

    pub fn input_dim(&self) -> usize {
        match &self.shared {
            Some(s) => s.input_dim(),
            None => self.treatment.input_dim(),
        }
    }

    pub fn outcome_outputs(&self) -> usize {
        self.outcome[0].output_dim()
    }

    fn features(&self, x: ArrayView2<f64>) -> Result<Features> {
        match &self.shared {
            None => {
                if x.ncols() != self.input_dim() {
                    return Err(shape_err(format!(
                        "input has {} columns, network expects {}",
                        x.ncols(),
                        self.input_dim()
                    )));
                }
                Ok(Features {
                    values: x.to_owned(),
                    shared: None,
                })
            }
            Some(net) => {
                let (pre, cache) = net.forward_batch(x)?;
                let act = net.spec.activation;
                Ok(Features {
                    values: pre.mapv(|v| act.apply(v)),
                    shared: Some((cache, pre)),
                })
            }
        }
    }

    /// Treatment logits and raw outcome-head outputs for both arms, one row
    /// per input row.
    pub fn heads(&self, x: ArrayView2<f64>) -> Result<(Vec<f64>, [Array2<f64>; 2])> {
        let f = self.features(x)?;
        let (logits, _) = self.treatment.forward_batch(f.values.view())?;
        let (r0, _) = self.outcome[0].forward_batch(f.values.view())?;
        let (r1, _) = self.outcome[1].forward_batch(f.values.view())?;
        Ok((logits.column(0).to_vec(), [r0, r1]))
    }

    /// Sum over rows of `ln p(t | w) + ln p(y | t, w)`.
    pub fn log_likelihood(
        &self,
        param: &OutcomeParam,
        x: ArrayView2<f64>,
        t: &[f64],
        y: &[f64],
        atoms: &[Option<usize>],
    ) -> Result<f64> {
        let (logits, raw) = self.heads(x)?;
        let mut scratch = vec![0.0; param.n_outputs()];
        let mut total = 0.0;
        for i in 0..x.nrows() {
            total += BernoulliHead::log_prob_grad(logits[i], t[i]).0;
            let arm = t[i] as usize;
            let row = raw[arm].row(i);
            total += param.log_prob_grad(row.as_slice().expect("standard layout"), y[i], atoms[i], &mut scratch);
        }
        Ok(total)
    }

    /// Summed log-likelihood of the batch and the gradient of the *mean
    /// negative* log-likelihood with respect to every parameter.
    pub fn loss_gradient(
        &self,
        param: &OutcomeParam,
        x: ArrayView2<f64>,
        t: &[f64],
        y: &[f64],
        atoms: &[Option<usize>],
    ) -> Result<(f64, TarNetGrads)> {
        let b = x.nrows();
        if t.len() != b || y.len() != b || atoms.len() != b {
            return Err(shape_err("batch columns have different lengths"));
        }
        if b == 0 {
            return Err(arg_err("empty batch"));
        }
        let scale = 1.0 / b as f64;
        let f = self.features(x)?;
        let mut d_feat = Array2::<f64>::zeros(f.values.raw_dim());

        let (logits, t_cache) = self.treatment.forward_batch(f.values.view())?;
        let mut total = 0.0;
        let mut up_t = Array2::<f64>::zeros((b, 1));
        for i in 0..b {
            let (lp, g) = BernoulliHead::log_prob_grad(logits[[i, 0]], t[i]);
            total += lp;
            up_t[[i, 0]] = -g * scale;
        }
        let (g_treatment, d_feat_t) = self.treatment.backward_batch(&t_cache, up_t.view())?;
        d_feat += &d_feat_t;

        let k = param.n_outputs();
        let mut g_outcome = [self.outcome[0].params.zeros_like(), self.outcome[1].params.zeros_like()];
        for arm in 0..2 {
            let rows: Vec<usize> = (0..b).filter(|&i| t[i] as usize == arm).collect();
            if rows.is_empty() {
                continue;
            }
            let net = &self.outcome[arm];
            let feats = f.values.select(Axis(0), &rows);
            let (raw, cache) = net.forward_batch(feats.view())?;
            let mut up = Array2::<f64>::zeros((rows.len(), k));
            let mut grad = vec![0.0; k];
            for (r, &i) in rows.iter().enumerate() {
                let raw_row = raw.row(r);
                total += param.log_prob_grad(raw_row.as_slice().expect("standard layout"), y[i], atoms[i], &mut grad);
                for (u, g) in up.row_mut(r).iter_mut().zip(&grad) {
                    *u = -g * scale;
                }
            }
            let (g, d_rows) = net.backward_batch(&cache, up.view())?;
            g_outcome[arm] = g;
            for (r, &i) in rows.iter().enumerate() {
                let mut dst = d_feat.row_mut(i);
                dst += &d_rows.row(r);
            }
        }

        let g_shared = match (&self.shared, f.shared) {
            (Some(net), Some((cache, pre))) => {
                let act = net.spec.activation;
                ndarray::Zip::from(&mut d_feat)
                    .and(&pre)
                    .and(&f.values)
                    .for_each(|g, &z, &a| *g *= act.derivative(z, a));
                Some(net.backward_batch(&cache, d_feat.view())?.0)
            }
            _ => None,
        };
        Ok((
            total,
            TarNetGrads {
                shared: g_shared,
                treatment: g_treatment,
                outcome: g_outcome,
            },
        ))
    }

    /// All parameters in [`TarNetGrads::to_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.shared.as_ref().map(|s| s.params.to_flat()).unwrap_or_default();
        out.extend(self.treatment.params.to_flat());
        out.extend(self.outcome[0].params.to_flat());
        out.extend(self.outcome[1].params.to_flat());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        let mut take = |p: &mut MlpParams| -> Result<()> {
            let n = p.num_params();
            if offset + n > flat.len() {
                return Err(shape_err("flat parameter vector is too short"));
            }
            p.set_flat(&flat[offset..offset + n])?;
            offset += n;
            Ok(())
        };
        if let Some(s) = &mut self.shared {
            take(&mut s.params)?;
        }
        take(&mut self.treatment.params)?;
        let [o0, o1] = &mut self.outcome;
        take(&mut o0.params)?;
        take(&mut o1.params)?;
        if offset != flat.len() {
            return Err(shape_err("flat parameter vector is too long"));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.shared.as_ref().is_none_or(|s| s.params.all_finite())
            && self.treatment.params.all_finite()
            && self.outcome.iter().all(|o| o.params.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::ContinuousFamily;
    use crate::rng::rng_from_seed;

    fn check_gradient(arch: Architecture, family: ContinuousFamily, atoms: Vec<f64>, seed: u64) {
        let mut rng = rng_from_seed(seed);
        let param = OutcomeParam {
            continuous: family,
            atoms,
        };
        let d = 3;
        let net = TarNet::init(d, arch, param.n_outputs(), &mut rng).unwrap();
        let b = 6;
        let x = Array2::from_shape_fn((b, d), |_| rng.random_range(-1.5..1.5));
        let t: Vec<f64> = (0..b).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = (0..b).map(|i| if i == 2 { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
        let atom_idx: Vec<Option<usize>> = y.iter().map(|&v| param.atom_index(v, 1e-12)).collect();
        let (ll, grads) = net.loss_gradient(&param, x.view(), &t, &y, &atom_idx).unwrap();
        let direct = net.log_likelihood(&param, x.view(), &t, &y, &atom_idx).unwrap();
        assert!((ll - direct).abs() < 1e-10);

        let analytic = grads.to_flat();
        let theta = net.to_flat();
        let h = 1e-6;
        let loss = |th: &[f64]| {
            let mut n2 = net.clone();
            n2.set_flat(th).unwrap();
            -n2.log_likelihood(&param, x.view(), &t, &y, &atom_idx).unwrap() / b as f64
        };
        for i in (0..theta.len()).step_by(3) {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-5);
            assert!(
                (fd - analytic[i]).abs() / denom < 1e-4,
                "param {i}: analytic {} fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let tanh2 = Architecture {
            hidden_layers: 2,
            width: 5,
            activation: Activation::Tanh,
        };
        let elu1 = Architecture {
            hidden_layers: 1,
            width: 4,
            activation: Activation::Elu,
        };
        check_gradient(tanh2, ContinuousFamily::Gaussian, vec![], 1);
        check_gradient(tanh2, ContinuousFamily::Flow { layers: 2, units: 3 }, vec![0.0], 2);
        check_gradient(elu1, ContinuousFamily::Flow { layers: 1, units: 4 }, vec![], 3);
        check_gradient(Architecture::linear(), ContinuousFamily::Gaussian, vec![0.0], 4);
    }

    #[test]
    fn linear_baseline_has_no_shared_net() {
        let mut rng = rng_from_seed(0);
        let net = TarNet::init(4, Architecture::linear(), 2, &mut rng).unwrap();
        assert!(net.shared.is_none());
        assert_eq!(net.treatment.params.layers.len(), 1);
        assert_eq!(net.input_dim(), 4);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = rng_from_seed(0);
        let arch = Architecture {
            hidden_layers: 2,
            width: 3,
            activation: Activation::Relu,
        };
        let mut net = TarNet::init(2, arch, 2, &mut rng).unwrap();
        let flat = net.to_flat();
        let copy = net.clone();
        net.set_flat(&flat).unwrap();
        assert_eq!(net, copy);
        assert!(net.set_flat(&flat[1..]).is_err());
    }
}
