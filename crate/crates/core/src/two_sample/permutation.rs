use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assignment::{
    assignment_cost, entropic_epsilon, sinkhorn_cost, sinkhorn_kernel_cost, KernelBlock, EXACT_ASSIGNMENT_LIMIT,
};
use super::multivariate::{distance_matrix, minimum_spanning_tree, nearest_neighbors, wasserstein_1d, WassersteinMethod};
use super::{check_same_dim, Orientation, SampleMatrix, TestReport};
use crate::error::{arg_err, Result};
use crate::rng::sub_rng;

const SINKHORN_MAX_ITER: usize = 50;
const SINKHORN_TOL: f64 = 1e-3;

/// Multivariate statistics that support precomputed permutation testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
    Energy,
    FriedmanRafsky,
    Knn { k: usize },
    Wasserstein { order: u8 },
}

impl Statistic {
    pub fn name(&self) -> String {
        match self {
            Statistic::Energy => "energy".into(),
            Statistic::FriedmanRafsky => "fr".into(),
            Statistic::Knn { .. } => "knn".into(),
            Statistic::Wasserstein { order } => format!("wass{order}"),
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            Statistic::FriedmanRafsky => Orientation::Less,
            _ => Orientation::Greater,
        }
    }
}

enum Pooled {
    Energy { dist: Array2<f64>, row_totals: Array1<f64> },
    Fr { edges: Vec<(usize, usize)> },
    Knn { k: usize, neighbors: Vec<usize> },
    Sorted { order: u8, values: Vec<f64>, sort_index: Vec<usize> },
    Exact { order: u8, cost: Array2<f64> },
    Entropic {
        order: u8,
        cost: Array2<f64>,
        kernel: Array2<f32>,
        kernel_cost: Array2<f32>,
        epsilon: f64,
    },
}

/// A statistic with everything that does not depend on the split between
/// the samples (distances, MST, neighbour lists, kernels) computed once on
/// the pooled data. Labels mark membership of the first sample.
pub struct PooledStatistic {
    stat: Statistic,
    m: usize,
    n: usize,
    pooled: Pooled,
}

pub(crate) fn natural_labels(m: usize, n: usize) -> Vec<bool> {
    (0..m + n).map(|i| i < m).collect()
}

impl PooledStatistic {
    pub fn new(stat: Statistic, x: &SampleMatrix, y: &SampleMatrix) -> Result<Self> {
        check_same_dim(x, y)?;
        let points = x.pooled(y)?;
        let total = points.nrows();
        let pooled = match stat {
            Statistic::Energy => {
                let dist = distance_matrix(points.view());
                let row_totals = dist.sum_axis(Axis(1));
                Pooled::Energy { dist, row_totals }
            }
            Statistic::FriedmanRafsky => {
                if total < 2 {
                    return Err(arg_err("Friedman-Rafsky needs at least two pooled points"));
                }
                Pooled::Fr {
                    edges: minimum_spanning_tree(points.view()),
                }
            }
            Statistic::Knn { k } => {
                if k == 0 || k >= total {
                    return Err(arg_err(format!("kNN needs 1 <= k < pooled size ({total}), got k = {k}")));
                }
                Pooled::Knn {
                    k,
                    neighbors: nearest_neighbors(points.view(), k),
                }
            }
            Statistic::Wasserstein { order } => {
                if order != 1 && order != 2 {
                    return Err(arg_err("wasserstein order must be 1 or 2"));
                }
                if points.ncols() == 1 {
                    let values = points.column(0).to_vec();
                    let mut sort_index: Vec<usize> = (0..total).collect();
                    sort_index.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
                    Pooled::Sorted { order, values, sort_index }
                } else {
                    if x.len() != y.len() {
                        return Err(arg_err(format!(
                            "multivariate wasserstein needs equal sample sizes, got {} and {}",
                            x.len(),
                            y.len()
                        )));
                    }
                    let mut cost = distance_matrix(points.view());
                    if order == 2 {
                        cost.mapv_inplace(|d| d * d);
                    }
                    if total <= EXACT_ASSIGNMENT_LIMIT {
                        Pooled::Exact { order, cost }
                    } else {
                        let epsilon = entropic_epsilon(cost.view());
                        let kernel = cost.mapv(|c| (-c / epsilon).exp() as f32);
                        let kernel_cost = cost.mapv(|c| ((-c / epsilon).exp() * c) as f32);
                        Pooled::Entropic {
                            order,
                            cost,
                            kernel,
                            kernel_cost,
                            epsilon,
                        }
                    }
                }
            }
        };
        Ok(PooledStatistic {
            stat,
            m: x.len(),
            n: y.len(),
            pooled,
        })
    }

    pub fn statistic(&self) -> Statistic {
        self.stat
    }

    pub fn wasserstein_method(&self) -> Option<WassersteinMethod> {
        match self.pooled {
            Pooled::Sorted { .. } => Some(WassersteinMethod::Sorted),
            Pooled::Exact { .. } => Some(WassersteinMethod::Exact),
            Pooled::Entropic { .. } => Some(WassersteinMethod::Entropic),
            _ => None,
        }
    }

    pub fn method(&self) -> &'static str {
        self.wasserstein_method().map_or("exact", |m| m.name())
    }

    /// Statistic for the split where `labels[i]` is true for rows of the
    /// first sample. Exactly `m` labels must be true.
    pub fn evaluate(&self, labels: &[bool]) -> Result<f64> {
        let (m, n) = (self.m as f64, self.n as f64);
        if labels.len() != self.m + self.n || labels.iter().filter(|&&l| l).count() != self.m {
            return Err(arg_err("labels do not match the sample sizes"));
        }
        Ok(match &self.pooled {
            Pooled::Energy { dist, row_totals } => {
                let mask: Array1<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
                let to_x = dist.dot(&mask);
                let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
                for (i, &l) in labels.iter().enumerate() {
                    let to_y = row_totals[i] - to_x[i];
                    if l {
                        sxx += to_x[i];
                        sxy += to_y;
                    } else {
                        syy += to_y;
                    }
                }
                2.0 * sxy / (m * n) - sxx / (m * m) - syy / (n * n)
            }
            Pooled::Fr { edges } => {
                let cross = edges.iter().filter(|&&(a, b)| labels[a] != labels[b]).count();
                (cross + 1) as f64
            }
            Pooled::Knn { k, neighbors } => {
                let same = neighbors
                    .chunks(*k)
                    .enumerate()
                    .map(|(i, nb)| nb.iter().filter(|&&j| labels[j] == labels[i]).count())
                    .sum::<usize>();
                same as f64 / (labels.len() * k) as f64
            }
            Pooled::Sorted { order, values, sort_index } => {
                let mut xs = Vec::with_capacity(self.m);
                let mut ys = Vec::with_capacity(self.n);
                for &i in sort_index {
                    if labels[i] {
                        xs.push(values[i]);
                    } else {
                        ys.push(values[i]);
                    }
                }
                wasserstein_1d(&xs, &ys, *order)?
            }
            Pooled::Exact { order, cost } => {
                let sub = split_block(cost, labels);
                finish_order(assignment_cost(sub.view()) / m, *order)
            }
            Pooled::Entropic {
                order,
                cost,
                kernel,
                kernel_cost,
                epsilon,
            } => {
                let k = split_block(kernel, labels);
                let kc = split_block(kernel_cost, labels);
                let block = KernelBlock {
                    kernel: k.as_slice().expect("standard layout"),
                    kernel_cost: kc.as_slice().expect("standard layout"),
                    m: self.m,
                    n: self.n,
                };
                let value = match sinkhorn_kernel_cost(&block, SINKHORN_MAX_ITER, SINKHORN_TOL) {
                    Some(v) => v,
                    None => sinkhorn_cost(split_block(cost, labels).view(), *epsilon, SINKHORN_MAX_ITER, SINKHORN_TOL)?,
                };
                finish_order(value, *order)
            }
        })
    }
}

fn finish_order(mean_cost: f64, order: u8) -> f64 {
    if order == 2 {
        mean_cost.max(0.0).sqrt()
    } else {
        mean_cost
    }
}

/// Rows of the first sample against columns of the second.
fn split_block<T: Copy>(matrix: &Array2<T>, labels: &[bool]) -> Array2<T> {
    let xs: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let ys: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    Array2::from_shape_fn((xs.len(), ys.len()), |(a, b)| matrix[[xs[a], ys[b]]])
}

/// Random re-split number `index`: a seeded shuffle of the pooled rows,
/// whose first `m` positions form the first sample.
fn permuted_labels(m: usize, n: usize, seed: u64, index: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..m + n).collect();
    order.shuffle(&mut sub_rng(seed, index));
    let mut labels = vec![false; m + n];
    for &i in &order[..m] {
        labels[i] = true;
    }
    labels
}

fn p_value(observed: f64, permuted: &[f64], orientation: Orientation) -> f64 {
    let tol = 1e-12 * observed.abs().max(1.0);
    let extreme = permuted
        .iter()
        .filter(|&&s| match orientation {
            Orientation::Greater => s >= observed - tol,
            Orientation::Less => s <= observed + tol,
        })
        .count();
    (1 + extreme) as f64 / (1 + permuted.len()) as f64
}

/// Permutation test with precomputed pooled structures.
///
/// `p = (1 + #{permuted at least as extreme}) / (1 + permutations)`.
/// Re-split `b` is drawn from sub-stream `b` of `seed`, so the result does
/// not depend on the number of threads.
pub fn permutation_test_with(
    x: &SampleMatrix,
    y: &SampleMatrix,
    stat: Statistic,
    permutations: usize,
    seed: u64,
) -> Result<TestReport> {
    if permutations < 1 {
        return Err(arg_err("at least one permutation is required"));
    }
    let pooled = PooledStatistic::new(stat, x, y)?;
    let (m, n) = (x.len(), y.len());
    let observed = pooled.evaluate(&natural_labels(m, n))?;
    let permuted = (0..permutations as u64)
        .into_par_iter()
        .map(|b| pooled.evaluate(&permuted_labels(m, n, seed, b)))
        .collect::<Result<Vec<f64>>>()?;
    let orientation = stat.orientation();
    Ok(TestReport {
        test: stat.name(),
        statistic: observed,
        p_value: p_value(observed, &permuted, orientation),
        permutations,
        seed,
        orientation: Some(orientation),
        method: pooled.method().to_string(),
    })
}

/// Permutation test for an arbitrary statistic of two samples. Uses the
/// same re-splits as [`permutation_test_with`] for a given seed.
pub fn permutation_test<F>(
    x: &SampleMatrix,
    y: &SampleMatrix,
    statistic: F,
    orientation: Orientation,
    permutations: usize,
    seed: u64,
) -> Result<TestReport>
where
    F: Fn(&SampleMatrix, &SampleMatrix) -> Result<f64> + Sync,
{
    if permutations < 1 {
        return Err(arg_err("at least one permutation is required"));
    }
    let pooled = x.pooled(y)?;
    let (m, n) = (x.len(), y.len());
    let observed = statistic(x, y)?;
    let permuted = (0..permutations as u64)
        .into_par_iter()
        .map(|b| {
            let labels = permuted_labels(m, n, seed, b);
            let xi: Vec<usize> = (0..m + n).filter(|&i| labels[i]).collect();
            let yi: Vec<usize> = (0..m + n).filter(|&i| !labels[i]).collect();
            statistic(
                &SampleMatrix::new(pooled.select(Axis(0), &xi))?,
                &SampleMatrix::new(pooled.select(Axis(0), &yi))?,
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TestReport {
        test: "custom".into(),
        statistic: observed,
        p_value: p_value(observed, &permuted, orientation),
        permutations,
        seed,
        orientation: Some(orientation),
        method: "exact".into(),
    })
}
