//! Numerically stable scalar helpers shared across modules.

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Cap applied to logits and log-variances before exponentiation.
pub const LOGIT_CAP: f64 = 30.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// ln(sigmoid(x)).
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax.
pub fn log_softmax(xs: &mut [f64]) {
    let lse = logsumexp(xs);
    xs.iter_mut().for_each(|x| *x -= lse);
}

#[inline]
pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * (LN_2PI + z * z)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Running mean `m_k = m_{k-1} + (x_k - m_{k-1}) / k`. Returns exactly `c`
/// when every entry equals `c`.
pub fn running_mean(xs: &[f64]) -> f64 {
    let mut m = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        m += (x - m) / (k + 1) as f64;
    }
    m
}

/// Linear-interpolation quantile of already sorted data (numpy's default).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}
