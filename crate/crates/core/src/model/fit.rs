//! Maximum-likelihood training with early stopping, grid search and the
//! realism gate.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Architecture, FitMetadata, GenerativeModel, TarNet, TarNetGrads};
use crate::data::{Dataset, PreprocessMode, Preprocessor};
use crate::error::{arg_err, Error, Result};
use crate::heads::{ContinuousFamily, OutcomeParam, ATOM_TOLERANCE};
use crate::nn::{Activation, AdamConfig, AdamState};
use crate::rng::{sub_rng, sub_seed};
use crate::two_sample::{permutation_test_with, SampleMatrix, Statistic};

const SPLIT_STREAM: u64 = 0;
const CANDIDATE_STREAM: u64 = 1 << 20;
const GATE_STREAM: u64 = 2 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Train, validation, test.
    pub split: [f64; 3],
    pub outcome: ContinuousFamily,
    /// Mix the continuous head with point masses at the dataset's atoms.
    pub use_atoms: bool,
    pub grid: Vec<Architecture>,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub preprocess: PreprocessMode,
    pub seed: u64,
    /// Realism gate level; candidates need a gate p-value above it.
    pub alpha: f64,
    pub gate_permutations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        let mut grid = Vec::new();
        for hidden_layers in [1, 2] {
            for width in [32, 64] {
                for activation in [Activation::Relu, Activation::Elu] {
                    grid.push(Architecture {
                        hidden_layers,
                        width,
                        activation,
                    });
                }
            }
        }
        FitConfig {
            split: [0.5, 0.1, 0.4],
            outcome: ContinuousFamily::Flow { layers: 2, units: 8 },
            use_atoms: true,
            grid,
            max_epochs: 300,
            patience: 10,
            batch_size: 128,
            adam: AdamConfig::default(),
            preprocess: PreprocessMode::Standardize,
            seed: 0,
            alpha: 0.05,
            gate_permutations: 200,
        }
    }
}

impl FitConfig {
    /// Linear-Gaussian baseline: no hidden layers, Gaussian outcome.
    pub fn linear_baseline() -> Self {
        FitConfig {
            outcome: ContinuousFamily::Gaussian,
            use_atoms: false,
            grid: vec![Architecture::linear()],
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|&f| !(f > 0.0) || !f.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(arg_err(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.split
            )));
        }
        if self.grid.is_empty() {
            return Err(arg_err("the architecture grid is empty"));
        }
        for arch in &self.grid {
            arch.validate()?;
        }
        self.outcome.validate()?;
        self.adam.validate()?;
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(arg_err("max_epochs, patience and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(arg_err(format!("gate level must lie in [0, 1), got {}", self.alpha)));
        }
        if self.gate_permutations == 0 {
            return Err(arg_err("the realism gate needs at least one permutation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into train/validation/test. Train and
/// validation get at least one row each; the test part may be empty.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if n < 2 {
        return Err(arg_err("splitting needs at least two rows"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut sub_rng(seed, SPLIT_STREAM));
    let n_train = ((fractions[0] * n as f64).round() as usize).clamp(1, n - 1);
    let n_val = ((fractions[1] * n as f64).round() as usize).clamp(1, n - n_train);
    Ok(SplitIndices {
        train: idx[..n_train].to_vec(),
        validation: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub architecture: Architecture,
    pub epochs: usize,
    pub validation_log_likelihood: f64,
    pub gate_p_value: f64,
}

/// Rows on the preprocessed scale with atom memberships resolved.
struct Prepared {
    x: Array2<f64>,
    t: Vec<f64>,
    y: Vec<f64>,
    atoms: Vec<Option<usize>>,
}

impl Prepared {
    fn new(ds: &Dataset, pre: &Preprocessor, param: &OutcomeParam) -> Result<Self> {
        let y: Vec<f64> = ds.y.iter().map(|&v| pre.y.forward(v)).collect();
        // Match on the original scale so scaling round-off cannot move a value
        // off its atom.
        let atoms = ds
            .y
            .iter()
            .map(|&v| {
                if param.atoms.is_empty() {
                    None
                } else {
                    ds.atoms.iter().position(|&a| (a - v).abs() <= ATOM_TOLERANCE)
                }
            })
            .collect();
        Ok(Prepared {
            x: pre.transform_w(&ds.w)?,
            t: ds.t.clone(),
            y,
            atoms,
        })
    }

    fn n(&self) -> usize {
        self.t.len()
    }

    fn batch(&self, rows: &[usize]) -> Prepared {
        Prepared {
            x: self.x.select(Axis(0), rows),
            t: rows.iter().map(|&i| self.t[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            atoms: rows.iter().map(|&i| self.atoms[i]).collect(),
        }
    }

    fn mean_log_likelihood(&self, net: &TarNet, param: &OutcomeParam) -> Result<f64> {
        Ok(net.log_likelihood(param, self.x.view(), &self.t, &self.y, &self.atoms)? / self.n() as f64)
    }
}

struct Optimizer {
    shared: Option<AdamState>,
    treatment: AdamState,
    outcome: [AdamState; 2],
}

impl Optimizer {
    fn new(config: AdamConfig, net: &TarNet) -> Result<Self> {
        Ok(Optimizer {
            shared: net.shared.as_ref().map(|s| AdamState::new(config, &s.params)).transpose()?,
            treatment: AdamState::new(config, &net.treatment.params)?,
            outcome: [
                AdamState::new(config, &net.outcome[0].params)?,
                AdamState::new(config, &net.outcome[1].params)?,
            ],
        })
    }

    fn step(&mut self, net: &mut TarNet, grads: &TarNetGrads) -> Result<()> {
        if let (Some(state), Some(s), Some(g)) = (&mut self.shared, &mut net.shared, &grads.shared) {
            state.step(&mut s.params, g)?;
        }
        self.treatment.step(&mut net.treatment.params, &grads.treatment)?;
        for arm in 0..2 {
            self.outcome[arm].step(&mut net.outcome[arm].params, &grads.outcome[arm])?;
        }
        Ok(())
    }
}

struct Trained {
    network: TarNet,
    epochs: usize,
    best_ll: f64,
    trajectory: Vec<f64>,
}

fn train(
    arch: Architecture,
    param: &OutcomeParam,
    train: &Prepared,
    val: &Prepared,
    config: &FitConfig,
    seed: u64,
) -> Result<Trained> {
    let mut rng = crate::rng::rng_from_seed(seed);
    let mut net = TarNet::init(train.x.ncols(), arch, param.n_outputs(), &mut rng)?;
    let mut opt = Optimizer::new(config.adam, &net)?;
    let mut best = (net.clone(), val.mean_log_likelihood(&net, param)?);
    let mut trajectory = Vec::new();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.n()).collect();
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(config.batch_size) {
            let b = train.batch(rows);
            let (_, grads) = net.loss_gradient(param, b.x.view(), &b.t, &b.y, &b.atoms)?;
            opt.step(&mut net, &grads)?;
        }
        if !net.all_finite() {
            return Err(Error::Training("parameters became non-finite".into()));
        }
        let ll = val.mean_log_likelihood(&net, param)?;
        trajectory.push(ll);
        if ll > best.1 {
            best = (net.clone(), ll);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Training("validation log-likelihood is not finite".into()));
    }
    Ok(Trained {
        network: best.0,
        epochs: trajectory.len(),
        best_ll: best.1,
        trajectory,
    })
}

/// Energy test of real against generated `(T, Y)` at the validation
/// covariates, with `Y` on the preprocessed scale.
fn realism_gate(model: &GenerativeModel, val: &Dataset, config: &FitConfig, seed: u64) -> Result<f64> {
    let (t_gen, y_gen) = model.sample_at(&val.w, seed)?;
    let scale = &model.preprocess.y;
    let matrix = |t: &[f64], y: &[f64]| {
        SampleMatrix::new(Array2::from_shape_fn((t.len(), 2), |(i, j)| {
            if j == 0 {
                t[i]
            } else {
                scale.forward(y[i])
            }
        }))
    };
    let real = matrix(&val.t, &val.y)?;
    let generated = matrix(&t_gen, &y_gen)?;
    Ok(permutation_test_with(&real, &generated, Statistic::Energy, config.gate_permutations, seed)?.p_value)
}

/// Grid search over `config.grid`. Each candidate is trained by Adam on
/// the training split with early stopping on validation likelihood, then
/// gated; the gated candidate with the best validation likelihood wins.
pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<GenerativeModel> {
    dataset.check_fittable()?;
    config.validate()?;
    let split = split_indices(dataset.n(), config.split, config.seed)?;
    let train_ds = dataset.select_rows(&split.train);
    let val_ds = dataset.select_rows(&split.validation);
    let preprocess = Preprocessor::fit(config.preprocess, &train_ds.w, &train_ds.y);
    let atoms = if config.use_atoms {
        dataset.atoms.clone()
    } else {
        Vec::new()
    };
    let param = OutcomeParam {
        continuous: config.outcome,
        atoms: atoms.iter().map(|&a| preprocess.y.forward(a)).collect(),
    };
    let train_rows = Prepared::new(&train_ds, &preprocess, &param)?;
    let val_rows = Prepared::new(&val_ds, &preprocess, &param)?;

    let results: Vec<Result<(Trained, GenerativeModel, f64)>> = config
        .grid
        .par_iter()
        .enumerate()
        .map(|(c, &arch)| {
            let trained = train(arch, &param, &train_rows, &val_rows, config, sub_seed(config.seed, CANDIDATE_STREAM + c as u64))?;
            let model = GenerativeModel::from_parts(
                preprocess.clone(),
                trained.network.clone(),
                config.outcome,
                atoms.clone(),
                train_ds.w.clone(),
                dataset.columns.clone(),
            )?;
            let p = realism_gate(&model, &val_ds, config, sub_seed(config.seed, GATE_STREAM + c as u64))?;
            Ok((trained, model, p))
        })
        .collect();

    let mut candidates = Vec::new();
    let mut first_error = None;
    for (r, &arch) in results.into_iter().zip(&config.grid) {
        match r {
            Ok(c) => candidates.push((arch, c)),
            Err(e) => {
                log::warn!("candidate {arch:?} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    if candidates.is_empty() {
        return Err(first_error.expect("every candidate either succeeds or fails"));
    }
    let summaries: Vec<CandidateSummary> = candidates
        .iter()
        .map(|(arch, (t, _, p))| CandidateSummary {
            architecture: *arch,
            epochs: t.epochs,
            validation_log_likelihood: t.best_ll,
            gate_p_value: *p,
        })
        .collect();
    let best_of = |pool: Vec<usize>| {
        pool.into_iter()
            .max_by(|&a, &b| candidates[a].1 .0.best_ll.total_cmp(&candidates[b].1 .0.best_ll).then(b.cmp(&a)))
    };
    let passing = best_of((0..candidates.len()).filter(|&i| candidates[i].1 .2 > config.alpha).collect());
    let overall = best_of((0..candidates.len()).collect()).expect("non-empty");
    let winner = passing.unwrap_or(overall);

    let (arch, (trained, mut model, p)) = candidates.swap_remove(winner);
    model.metadata = FitMetadata {
        seed: config.seed,
        architecture: Some(arch),
        epochs: trained.epochs,
        validation_log_likelihood: trained.best_ll,
        validation_trajectory: trained.trajectory,
        gate_p_value: Some(p),
        candidates: summaries,
        split: Some(split),
    };
    if passing.is_none() {
        return Err(Error::NoRealisticModel {
            best: Box::new(model),
            p_value: p,
            alpha: config.alpha,
        });
    }
    Ok(model)
}
