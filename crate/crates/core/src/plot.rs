//! Plot-ready tables comparing real and generated data: marginal
//! histograms, kernel density curves of `Y | T` and Q-Q pairs of `Y`.

use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::error::{arg_err, Result};
use crate::io::atomic_write;
use crate::math::{quantile_sorted, sorted_copy};
use crate::model::GenerativeModel;

pub const HISTOGRAM_BINS: usize = 40;
pub const KDE_GRID: usize = 256;
pub const QQ_POINTS: usize = 99;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges shared by both samples.
    pub edges: Vec<f64>,
    pub real: Vec<usize>,
    pub generated: Vec<usize>,
}

fn counts(values: &[f64], edges: &[f64]) -> Vec<usize> {
    let bins = edges.len() - 1;
    let mut out = vec![0; bins];
    for &v in values {
        // Right-closed last bin so the maximum is counted.
        let k = edges[1..].partition_point(|&e| e <= v).min(bins - 1);
        out[k] += 1;
    }
    out
}

/// Equal-width histogram over the combined range of both samples.
pub fn histogram(real: &[f64], generated: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 || real.is_empty() || generated.is_empty() {
        return Err(arg_err("histogram needs bins and two non-empty samples"));
    }
    let all = real.iter().chain(generated);
    let lo = all.clone().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = all.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let edges: Vec<f64> = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
    Ok(Histogram {
        real: counts(real, &edges),
        generated: counts(generated, &edges),
        edges,
    })
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling
/// back to whichever spread is positive.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let sorted = sorted_copy(values);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 1.0,
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn gaussian_kde(values: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            values
                .iter()
                .map(|&v| (-0.5 * ((g - v) / bandwidth).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Paired quantiles at `k / (points + 1)`, `k = 1..=points`.
pub fn qq_pairs(real: &[f64], generated: &[f64], points: usize) -> Vec<(f64, f64, f64)> {
    let (a, b) = (sorted_copy(real), sorted_copy(generated));
    (1..=points)
        .map(|k| {
            let q = k as f64 / (points + 1) as f64;
            (q, quantile_sorted(&a, q), quantile_sorted(&b, q))
        })
        .collect()
}

fn write_table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

fn arm(ds: &Dataset, t: f64) -> Vec<f64> {
    ds.arm_indices(t).into_iter().map(|i| ds.y[i]).collect()
}

/// Writes `hist_t.csv`, `hist_y.csv`, `kde_y_given_t.csv` and `qq_y.csv`
/// into `out_dir`, comparing `data` with model draws of `T` and `Y` at the
/// same covariate rows, made with `seed`. Returns the written paths.
pub fn export_plot_data(model: &GenerativeModel, data: &Dataset, out_dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    data.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let (t_gen, y_gen) = model.sample_at(&data.w, seed)?;
    let generated = Dataset::new(data.w.clone(), t_gen, y_gen)?;
    let mut written = Vec::new();

    let hist_t = Histogram {
        edges: vec![-0.5, 0.5, 1.5],
        real: counts(&data.t, &[-0.5, 0.5, 1.5]),
        generated: counts(&generated.t, &[-0.5, 0.5, 1.5]),
    };
    let hist_y = histogram(&data.y, &generated.y, HISTOGRAM_BINS)?;
    for (name, h) in [("hist_t.csv", &hist_t), ("hist_y.csv", &hist_y)] {
        let p = out_dir.join(name);
        write_table(
            &p,
            &["bin_left", "bin_right", "real", "generated"],
            (0..h.real.len()).map(|k| vec![h.edges[k], h.edges[k + 1], h.real[k] as f64, h.generated[k] as f64]),
        )?;
        written.push(p);
    }

    let samples = [arm(data, 0.0), arm(data, 1.0), arm(&generated, 0.0), arm(&generated, 1.0)];
    let bandwidths: Vec<f64> = samples
        .iter()
        .map(|s| if s.len() >= 2 { silverman_bandwidth(s) } else { f64::NAN })
        .collect();
    let h_max = bandwidths.iter().copied().filter(|h| h.is_finite()).fold(0.0, f64::max);
    let lo = hist_y.edges[0] - 4.0 * h_max;
    let hi = hist_y.edges[HISTOGRAM_BINS] + 4.0 * h_max;
    let grid: Vec<f64> = (0..KDE_GRID).map(|k| lo + (hi - lo) * k as f64 / (KDE_GRID - 1) as f64).collect();
    let curves: Vec<Vec<f64>> = samples
        .iter()
        .zip(&bandwidths)
        .map(|(s, &h)| {
            if h.is_finite() {
                gaussian_kde(s, h, &grid)
            } else {
                vec![f64::NAN; KDE_GRID]
            }
        })
        .collect();
    let p = out_dir.join("kde_y_given_t.csv");
    write_table(
        &p,
        &["y", "real_t0", "real_t1", "generated_t0", "generated_t1"],
        (0..KDE_GRID).map(|k| vec![grid[k], curves[0][k], curves[1][k], curves[2][k], curves[3][k]]),
    )?;
    written.push(p);

    let p = out_dir.join("qq_y.csv");
    write_table(
        &p,
        &["quantile", "real", "generated"],
        qq_pairs(&data.y, &generated.y, QQ_POINTS).into_iter().map(|(q, a, b)| vec![q, a, b]),
    )?;
    written.push(p);
    Ok(written)
}
