//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use causebench::two_sample::*;
use ndarray::{Array2, ArrayView1};
use rand::Rng;

pub fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

pub fn random_sample(rng: &mut impl Rng, m: usize, d: usize) -> SampleMatrix {
    SampleMatrix::new(Array2::from_shape_fn((m, d), |_| rng.random_range(-2.0..2.0))).unwrap()
}

pub fn pooled_points(x: &SampleMatrix, y: &SampleMatrix) -> Array2<f64> {
    x.pooled(y).unwrap()
}

pub fn energy_oracle(x: &SampleMatrix, y: &SampleMatrix) -> f64 {
    let mean = |a: &SampleMatrix, b: &SampleMatrix| {
        let mut s = 0.0;
        for i in 0..a.len() {
            for j in 0..b.len() {
                s += dist(a.row(i), b.row(j));
            }
        }
        s / (a.len() * b.len()) as f64
    };
    2.0 * mean(x, y) - mean(x, x) - mean(y, y)
}

/// Minimum spanning tree by enumerating every labelled tree through its
/// Prufer sequence.
pub fn mst_oracle(points: &Array2<f64>) -> Vec<(usize, usize)> {
    let n = points.nrows();
    if n == 2 {
        return vec![(0, 1)];
    }
    let len = n - 2;
    let total = n.pow(len as u32);
    let mut best = (f64::INFINITY, Vec::new());
    for code in 0..total {
        let mut seq = Vec::with_capacity(len);
        let mut c = code;
        for _ in 0..len {
            seq.push(c % n);
            c /= n;
        }
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut edges = Vec::with_capacity(n - 1);
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
            edges.push((leaf.min(s), leaf.max(s)));
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        edges.push((rest[0], rest[1]));
        let w: f64 = edges.iter().map(|&(a, b)| dist(points.row(a), points.row(b))).sum();
        if w < best.0 {
            best = (w, edges);
        }
    }
    best.1
}

pub fn fr_oracle(x: &SampleMatrix, y: &SampleMatrix) -> f64 {
    let points = pooled_points(x, y);
    let m = x.len();
    let cross = mst_oracle(&points).iter().filter(|&&(a, b)| (a < m) != (b < m)).count();
    (cross + 1) as f64
}

pub fn knn_oracle(x: &SampleMatrix, y: &SampleMatrix, k: usize) -> f64 {
    let points = pooled_points(x, y);
    let n = points.nrows();
    let m = x.len();
    let mut same = 0;
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist(points.row(i), points.row(j)), j))
            .collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        same += others[..k].iter().filter(|&&(_, j)| (j < m) == (i < m)).count();
    }
    same as f64 / (n * k) as f64
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn wasserstein_oracle(x: &SampleMatrix, y: &SampleMatrix, order: u8) -> f64 {
    let n = x.len();
    let best = permutations(n)
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| dist(x.row(i), y.row(j)).powi(order as i32))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        / n as f64;
    if order == 2 {
        best.sqrt()
    } else {
        best
    }
}

/// Exact permutation p-value over all C(6, 3) re-splits (identity included).
pub fn exhaustive_p(x: &SampleMatrix, y: &SampleMatrix, stat: Statistic) -> f64 {
    let pooled = pooled_points(x, y);
    let observed = PooledStatistic::new(stat, x, y).unwrap();
    let labels: Vec<bool> = (0..6).map(|i| i < 3).collect();
    let obs = observed.evaluate(&labels).unwrap();
    let mut extreme = 0;
    let mut count = 0;
    for a in 0..6 {
        for b in (a + 1)..6 {
            for c in (b + 1)..6 {
                let lab: Vec<bool> = (0..6).map(|i| i == a || i == b || i == c).collect();
                let xs: Vec<usize> = (0..6).filter(|&i| lab[i]).collect();
                let ys: Vec<usize> = (0..6).filter(|&i| !lab[i]).collect();
                let sx = SampleMatrix::new(pooled.select(ndarray::Axis(0), &xs)).unwrap();
                let sy = SampleMatrix::new(pooled.select(ndarray::Axis(0), &ys)).unwrap();
                let s = PooledStatistic::new(stat, &sx, &sy)
                    .unwrap()
                    .evaluate(&[true, true, true, false, false, false])
                    .unwrap();
                let more_extreme = match stat.orientation() {
                    Orientation::Greater => s >= obs - 1e-12,
                    Orientation::Less => s <= obs + 1e-12,
                };
                extreme += more_extreme as usize;
                count += 1;
            }
        }
    }
    assert_eq!(count, 20);
    extreme as f64 / 20.0
}
