//! Optimal transport between two equal-size point clouds with uniform
//! weights.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Largest pooled size solved by exact assignment; bigger problems use
/// entropic regularization.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 512;

/// Minimum-cost perfect matching on a square cost matrix (Hungarian
/// algorithm with potentials, O(n^3)). Returns the total cost.
pub fn assignment_cost(cost: ArrayView2<f64>) -> f64 {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    if n == 0 {
        return 0.0;
    }
    // 1-based indices, column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_to = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        min_to.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < min_to[j] {
                    min_to[j] = cur;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[[row_of[j] - 1, j - 1]]).sum()
}

/// Transport cost `sum P_ij C_ij` of the entropic plan between uniform
/// marginals, with regularization `epsilon`.
///
/// Runs in the log domain, so small `epsilon` cannot underflow.
pub fn sinkhorn_cost(cost: ArrayView2<f64>, epsilon: f64, max_iter: usize, tol: f64) -> Result<f64> {
    let (m, n) = cost.dim();
    if m == 0 || n == 0 || !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("sinkhorn needs a non-empty cost and epsilon > 0".into()));
    }
    let log_a = -(m as f64).ln();
    let log_b = -(n as f64).ln();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut scratch = vec![0.0; m.max(n)];
    let lse_row = |i: usize, g: &[f64], scratch: &mut [f64]| -> f64 {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            let z = (g[j] - cost[[i, j]]) / epsilon;
            scratch[j] = z;
            max = max.max(z);
        }
        max + scratch[..n].iter().map(|z| (z - max).exp()).sum::<f64>().ln()
    };
    for _ in 0..max_iter {
        for i in 0..m {
            f[i] = epsilon * (log_a - lse_row(i, &g, &mut scratch));
        }
        let mut err: f64 = 0.0;
        for j in 0..n {
            let mut max = f64::NEG_INFINITY;
            for i in 0..m {
                let z = (f[i] - cost[[i, j]]) / epsilon;
                scratch[i] = z;
                max = max.max(z);
            }
            let lse = max + scratch[..m].iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let new_g = epsilon * (log_b - lse);
            // Column marginal before the update, relative to its target.
            let col_mass = (lse + g[j] / epsilon - log_b).exp();
            err = err.max((col_mass - 1.0).abs());
            g[j] = new_g;
        }
        if err < tol {
            break;
        }
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            let c = cost[[i, j]];
            total += ((f[i] + g[j] - c) / epsilon).exp() * c;
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric("entropic transport cost is not finite".into()));
    }
    Ok(total)
}

/// Regularization used for problems beyond [`EXACT_ASSIGNMENT_LIMIT`]:
/// 10% of the mean cost, floored at `max / 80` so that every kernel entry
/// `exp(-C / epsilon)` is a normal single-precision number.
pub fn entropic_epsilon(cost: ArrayView2<f64>) -> f64 {
    let n = cost.len().max(1) as f64;
    let mean = cost.sum() / n;
    let max = cost.iter().copied().fold(0.0, f64::max);
    (0.1 * mean).max(max / 80.0)
}

/// Row-major `m x n` single-precision kernel block.
pub(crate) struct KernelBlock<'a> {
    pub kernel: &'a [f32],
    /// `K * C`, for the final transport cost.
    pub kernel_cost: &'a [f32],
    pub m: usize,
    pub n: usize,
}

fn kernel_times(k: &[f32], n: usize, v: &[f64], out: &mut [f64]) {
    for (row, o) in k.chunks_exact(n).zip(out.iter_mut()) {
        let mut acc = [0.0f64; 4];
        let mut chunks = row.chunks_exact(4);
        let mut vs = v.chunks_exact(4);
        for (r, w) in (&mut chunks).zip(&mut vs) {
            for l in 0..4 {
                acc[l] += r[l] as f64 * w[l];
            }
        }
        let mut tail = 0.0;
        for (r, w) in chunks.remainder().iter().zip(vs.remainder()) {
            tail += *r as f64 * w;
        }
        *o = acc[0] + acc[1] + acc[2] + acc[3] + tail;
    }
}

fn kernel_t_times(k: &[f32], n: usize, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (row, &ui) in k.chunks_exact(n).zip(u) {
        for (o, r) in out.iter_mut().zip(row) {
            *o += ui * *r as f64;
        }
    }
}

/// Sinkhorn scaling on a kernel block. Returns the transport cost of the
/// final plan, or `None` when the scalings under- or overflow.
pub(crate) fn sinkhorn_kernel_cost(block: &KernelBlock<'_>, max_iter: usize, tol: f64) -> Option<f64> {
    let (m, n) = (block.m, block.n);
    let a = 1.0 / m as f64;
    let b = 1.0 / n as f64;
    let mut u = vec![1.0; m];
    let mut v = vec![1.0; n];
    let mut kv = vec![0.0; m];
    let mut ktu = vec![0.0; n];
    for iter in 0..max_iter {
        kernel_times(block.kernel, n, &v, &mut kv);
        if iter > 0 {
            let err: f64 = u.iter().zip(&kv).map(|(ui, k)| (ui * k - a).abs()).sum();
            if err < tol {
                break;
            }
        }
        for (ui, k) in u.iter_mut().zip(&kv) {
            *ui = a / k;
        }
        kernel_t_times(block.kernel, n, &u, &mut ktu);
        for (vj, k) in v.iter_mut().zip(&ktu) {
            *vj = b / k;
        }
        if !u.iter().chain(&v).all(|x| x.is_finite()) {
            return None;
        }
    }
    kernel_times(block.kernel_cost, n, &v, &mut kv);
    let total: f64 = u.iter().zip(&kv).map(|(ui, k)| ui * k).sum();
    total.is_finite().then_some(total)
}
