use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::permutation::{natural_labels, PooledStatistic, Statistic};
use super::SampleMatrix;
use crate::error::{arg_err, Result};

pub(crate) fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

pub(crate) fn distance_matrix(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclidean(points.row(i), points.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Euclidean minimum spanning tree by Prim's algorithm on the complete
/// graph. Among equal keys the lowest vertex index is taken first.
pub fn minimum_spanning_tree(points: ArrayView2<f64>) -> Vec<(usize, usize)> {
    let n = points.nrows();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut key = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let p = points.row(current);
        let mut best = usize::MAX;
        let mut best_key = f64::INFINITY;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let d = euclidean(p, points.row(v));
            if d < key[v] {
                key[v] = d;
                parent[v] = current;
            }
            if key[v] < best_key || best == usize::MAX {
                best_key = key[v];
                best = v;
            }
        }
        in_tree[best] = true;
        edges.push((parent[best].min(best), parent[best].max(best)));
        current = best;
    }
    edges
}

/// For every point, the indices of its `k` nearest other points, nearest
/// first, ties broken by lower index.
pub(crate) fn nearest_neighbors(points: ArrayView2<f64>, k: usize) -> Vec<usize> {
    let n = points.nrows();
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (euclidean(points.row(i), points.row(j)), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        out.extend(cand.iter().map(|c| c.1));
    }
    out
}

/// Energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|` with all pairs
/// (V-statistic form).
pub fn energy_stat(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    evaluate_natural(Statistic::Energy, x, y)
}

/// Friedman-Rafsky runs: cross-sample edges of the pooled Euclidean MST
/// plus one. Small values indicate a difference.
pub fn fr_stat(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    evaluate_natural(Statistic::FriedmanRafsky, x, y)
}

/// Fraction of (point, neighbour) pairs among the `k` nearest pooled
/// neighbours that share a sample.
pub fn knn_stat(x: &SampleMatrix, y: &SampleMatrix, k: usize) -> Result<f64> {
    evaluate_natural(Statistic::Knn { k }, x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WassersteinMethod {
    /// Sorted matching of one-dimensional samples.
    Sorted,
    Exact,
    Entropic,
}

impl WassersteinMethod {
    pub fn name(&self) -> &'static str {
        match self {
            WassersteinMethod::Sorted => "sorted",
            WassersteinMethod::Exact => "exact",
            WassersteinMethod::Entropic => "entropic",
        }
    }
}

/// Wasserstein-`order` distance between the empirical measures, with the
/// solver that was used.
pub fn wasserstein_dist(x: &SampleMatrix, y: &SampleMatrix, order: u8) -> Result<(f64, WassersteinMethod)> {
    let pooled = PooledStatistic::new(Statistic::Wasserstein { order }, x, y)?;
    let value = pooled.evaluate(&natural_labels(x.len(), y.len()))?;
    Ok((value, pooled.wasserstein_method().expect("wasserstein statistic")))
}

/// One-dimensional Wasserstein distance between sorted samples of any
/// sizes, via the quantile coupling.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64], order: u8) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(arg_err("wasserstein needs non-empty samples"));
    }
    let (m, n) = (xs.len() as u128, ys.len() as u128);
    // Quantile levels in units of 1 / (m n), so the breakpoints are exact.
    let (mut i, mut j) = (0usize, 0usize);
    let mut level: u128 = 0;
    let total = m * n;
    let mut acc = 0.0;
    while level < total {
        let next = ((i as u128 + 1) * n).min((j as u128 + 1) * m);
        let gap = (xs[i] - ys[j]).abs();
        let c = if order == 1 { gap } else { gap * gap };
        acc += (next - level) as f64 * c;
        level = next;
        if level == (i as u128 + 1) * n {
            i += 1;
        }
        if level == (j as u128 + 1) * m {
            j += 1;
        }
        if i == xs.len() || j == ys.len() {
            break;
        }
    }
    let mean = acc / total as f64;
    Ok(if order == 1 { mean } else { mean.sqrt() })
}

fn evaluate_natural(stat: Statistic, x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    PooledStatistic::new(stat, x, y)?.evaluate(&natural_labels(x.len(), y.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn line(v: &[f64]) -> SampleMatrix {
        SampleMatrix::from_column(v).unwrap()
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy_stat(&line(&[0.0]), &line(&[2.0])).unwrap(), 4.0);
        let a = line(&[0.0, 1.0, 5.0]);
        let b = line(&[5.0, 0.0, 1.0]);
        assert!(energy_stat(&a, &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn fr_examples() {
        assert_eq!(fr_stat(&line(&[0.0, 1.0]), &line(&[10.0, 11.0])).unwrap(), 2.0);
        assert_eq!(fr_stat(&line(&[0.0, 2.0, 4.0]), &line(&[1.0, 3.0, 5.0])).unwrap(), 6.0);
        assert_eq!(fr_stat(&line(&[0.0]), &line(&[0.0])).unwrap(), 2.0);
        let edges = minimum_spanning_tree(array![[0.0], [1.0], [10.0], [11.0]].view());
        let mut sorted = edges.clone();
        sorted.sort();
        assert_eq!(sorted, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn knn_examples() {
        assert_eq!(knn_stat(&line(&[0.0, 1.0]), &line(&[10.0, 11.0]), 1).unwrap(), 1.0);
        assert_eq!(knn_stat(&line(&[0.0, 2.0]), &line(&[1.0, 3.0]), 1).unwrap(), 0.0);
        // k = pooled - 1: every other point is a neighbour.
        let x = line(&[0.3, 7.0, -2.0]);
        let y = line(&[1.0, 4.0]);
        let expected = (3.0 * 2.0 + 2.0 * 1.0) / (5.0 * 4.0);
        assert!((knn_stat(&x, &y, 4).unwrap() - expected).abs() < 1e-15);
        assert!(knn_stat(&x, &y, 5).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let (w1, _) = wasserstein_dist(&line(&[0.0]), &line(&[1.0]), 1).unwrap();
        let (w2, _) = wasserstein_dist(&line(&[0.0]), &line(&[1.0]), 2).unwrap();
        assert_eq!((w1, w2), (1.0, 1.0));
        let (w, method) = wasserstein_dist(&line(&[0.0, 1.0]), &line(&[1.0, 2.0]), 1).unwrap();
        assert_eq!(w, 1.0);
        assert_eq!(method, WassersteinMethod::Sorted);
        let x = SampleMatrix::new(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let y = SampleMatrix::new(array![[0.0, 1.0]]).unwrap();
        assert!(wasserstein_dist(&x, &y, 1).is_err());
    }

    #[test]
    fn wasserstein_1d_unequal_sizes() {
        // Quantile functions: x = 0 on [0, 1/2), 1 on [1/2, 1); y = 0.5 on [0, 1).
        let w1 = wasserstein_1d(&[0.0, 1.0], &[0.5], 1).unwrap();
        assert!((w1 - 0.5).abs() < 1e-15);
        // x = {0,1,2}, y = {0,3}: levels 1/3,1/2,2/3 -> |0-0|/3 + |1-0|/6 + |1-3|/6 + |2-3|/3
        let w = wasserstein_1d(&[0.0, 1.0, 2.0], &[0.0, 3.0], 1).unwrap();
        assert!((w - (1.0 / 6.0 + 2.0 / 6.0 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn large_multivariate_uses_entropic_path() {
        let mut rng = rng_from_seed(8);
        let a = Array2::from_shape_fn((300, 2), |_| rng.random_range(0.0..1.0));
        let b = Array2::from_shape_fn((300, 2), |_| rng.random_range(0.0..1.0) + 0.5);
        let cost = Array2::from_shape_fn((300, 300), |(i, j)| euclidean(a.row(i), b.row(j)));
        let exact = crate::two_sample::assignment_cost(cost.view()) / 300.0;
        let (w, method) =
            wasserstein_dist(&SampleMatrix::new(a).unwrap(), &SampleMatrix::new(b).unwrap(), 1).unwrap();
        assert_eq!(method, WassersteinMethod::Entropic);
        assert!(w >= exact - 1e-3 && w < exact * 1.1, "{w} vs {exact}");
    }
}
