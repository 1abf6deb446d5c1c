//! k-nearest-neighbour averaging and CART regression trees. Classifiers
//! reuse both on a 0/1 target: the neighbour average is the class-1
//! fraction, and variance reduction on a binary target ranks splits exactly
//! as Gini reduction does.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};

use crate::error::{arg_err, shape_err, Result};
use crate::math::running_mean;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NeighborAverage {
    points: Array2<f64>,
    target: Vec<f64>,
    k: usize,
}

impl NeighborAverage {
    pub(crate) fn fit(x: ArrayView2<f64>, y: &[f64], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(arg_err("k must be at least 1"));
        }
        Ok(NeighborAverage {
            points: x.to_owned(),
            target: y.to_vec(),
            k: k.min(y.len()),
        })
    }

    /// Mean target of the `k` closest training points. Distance ties are
    /// broken by target value, then by training index.
    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.points.ncols() {
            return Err(shape_err("query dimension differs from training data"));
        }
        let n = self.target.len();
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(x.nrows());
        for q in x.rows() {
            cand.clear();
            for (i, p) in self.points.rows().into_iter().enumerate() {
                let d: f64 = p.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                cand.push((d, i));
            }
            let order = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.total_cmp(&b.0)
                    .then(self.target[a.1].total_cmp(&self.target[b.1]))
                    .then(a.1.cmp(&b.1))
            };
            if self.k < n {
                cand.select_nth_unstable_by(self.k - 1, order);
            }
            cand[..self.k].sort_by(order);
            out.push(cand[..self.k].iter().map(|&(_, i)| self.target[i]).sum::<f64>() / self.k as f64);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Variance-reduction CART with midpoint thresholds and no pruning.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RegressionTree {
    root: Node,
    features: usize,
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl RegressionTree {
    pub(crate) fn fit(x: ArrayView2<f64>, y: &[f64], params: TreeParams) -> Result<Self> {
        if x.nrows() == 0 || x.nrows() != y.len() {
            return Err(shape_err("tree needs matching, non-empty inputs"));
        }
        if params.min_leaf == 0 {
            return Err(arg_err("minimum leaf size must be at least 1"));
        }
        let rows: Vec<usize> = (0..y.len()).collect();
        Ok(RegressionTree {
            root: grow(x, y, rows, 0, params),
            features: x.ncols(),
        })
    }

    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.features {
            return Err(shape_err("query dimension differs from training data"));
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let mut node = &self.root;
                loop {
                    match node {
                        Node::Leaf(v) => return *v,
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => node = if row[*feature] <= *threshold { left } else { right },
                    }
                }
            })
            .collect())
    }

    pub(crate) fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }
}

fn mean_of(y: &[f64], rows: &[usize]) -> f64 {
    // Sorted summation keeps the leaf value independent of row order.
    let mut v: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    v.sort_by(f64::total_cmp);
    running_mean(&v)
}

fn grow(x: ArrayView2<f64>, y: &[f64], rows: Vec<usize>, depth: usize, params: TreeParams) -> Node {
    let n = rows.len();
    let leaf = Node::Leaf(mean_of(y, &rows));
    if params.max_depth.is_some_and(|m| depth >= m) || n < 2 * params.min_leaf {
        return leaf;
    }
    let first = y[rows[0]];
    if rows.iter().all(|&i| y[i] == first) {
        return leaf;
    }
    let Some(best) = best_split(x, y, &rows, params.min_leaf) else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x[[i, best.feature]] <= best.threshold);
    Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: Box::new(grow(x, y, l, depth + 1, params)),
        right: Box::new(grow(x, y, r, depth + 1, params)),
    }
}

fn best_split(x: ArrayView2<f64>, y: &[f64], rows: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    let mut best: Option<Split> = None;
    let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
    for feature in 0..x.ncols() {
        sorted.clear();
        sorted.extend(rows.iter().map(|&i| (x[[i, feature]], y[i])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let total: f64 = sorted.iter().map(|p| p.1).sum();
        let total_sq: f64 = sorted.iter().map(|p| p.1 * p.1).sum();
        let parent_sse = total_sq - total * total / n as f64;
        let (mut sum, mut sq) = (0.0, 0.0);
        for k in 0..n - 1 {
            sum += sorted[k].1;
            sq += sorted[k].1 * sorted[k].1;
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf || sorted[k].0 == sorted[k + 1].0 {
                continue;
            }
            let sse_l = sq - sum * sum / nl as f64;
            let rs = total - sum;
            let sse_r = (total_sq - sq) - rs * rs / nr as f64;
            let gain = parent_sse - sse_l - sse_r;
            let better = match &best {
                None => gain > 1e-12 * parent_sse.abs().max(f64::MIN_POSITIVE),
                Some(b) => gain.partial_cmp(&b.gain) == Some(Ordering::Greater),
            };
            if better {
                best = Some(Split {
                    gain,
                    feature,
                    threshold: 0.5 * (sorted[k].0 + sorted[k + 1].0),
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn knn_tie_breaking_is_by_value() {
        let x = array![[0.0], [1.0], [-1.0]];
        let knn = NeighborAverage::fit(x.view(), &[10.0, 5.0, 1.0], 2).unwrap();
        // Both neighbours at distance 1 from 0.0 tie; with k = 2 the query
        // point itself plus the smaller value are used.
        assert_eq!(knn.predict(array![[0.0]].view()).unwrap(), vec![5.5]);
    }

    #[test]
    fn tree_finds_step() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| if j == 0 { i as f64 } else { (i % 3) as f64 });
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 1.0 } else { 4.0 }).collect();
        let tree = RegressionTree::fit(
            x.view(),
            &y,
            TreeParams {
                max_depth: None,
                min_leaf: 5,
            },
        )
        .unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.predict(array![[9.4, 0.0], [9.6, 0.0]].view()).unwrap(), vec![1.0, 4.0]);
    }

    #[test]
    fn min_leaf_limits_growth() {
        let x = Array2::from_shape_fn((9, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let tree = RegressionTree::fit(
            x.view(),
            &y,
            TreeParams {
                max_depth: None,
                min_leaf: 5,
            },
        )
        .unwrap();
        assert_eq!(tree.depth(), 0);
    }
}
