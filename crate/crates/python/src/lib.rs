//! Python bindings. Errors raise `CausebenchError` with `args = (kind, message)`.

use causebench::benchmark::{
    ate_metrics, fidelity_report, pehe, run_benchmark, BenchmarkConfig, FidelityConfig, FidelityReport, MetricRow,
    TestSelection,
};
use causebench::data::{Dataset, PotentialOutcomeMeans};
use causebench::estimators::EstimatorSpec;
use causebench::io::{self, AtomSpec};
use causebench::model::{self, FitConfig, GenerativeModel, KnobConfig, LinearHead};
use causebench::two_sample::{es_test, ks_test, permutation_test_with, SampleMatrix, Statistic, TestReport};
use causebench::Error;
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pycausebench, CausebenchError, PyValueError);

fn raise(e: Error) -> PyErr {
    CausebenchError::new_err((e.kind(), e.to_string()))
}

fn config_err(msg: impl std::fmt::Display) -> PyErr {
    CausebenchError::new_err(("config", msg.to_string()))
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for causebench::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(raise)
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(raise(Error::Shape("rows have different lengths".into())));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| raise(Error::Shape(e.to_string())))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "Dataset", module = "pycausebench", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (w, t, y, atoms=None, columns=None, mu0=None, mu1=None))]
    fn new(
        w: Vec<Vec<f64>>,
        t: Vec<f64>,
        y: Vec<f64>,
        atoms: Option<Vec<f64>>,
        columns: Option<Vec<String>>,
        mu0: Option<Vec<f64>>,
        mu1: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let mut ds = Dataset::new(matrix(w)?, t, y).or_raise()?;
        if let Some(a) = atoms {
            ds = ds.with_atoms(a).or_raise()?;
        }
        if let Some(c) = columns {
            ds = ds.with_columns(c).or_raise()?;
        }
        match (mu0, mu1) {
            (Some(mu0), Some(mu1)) => ds = ds.with_effects(PotentialOutcomeMeans { mu0, mu1 }).or_raise()?,
            (None, None) => {}
            _ => return Err(raise(Error::InvalidArgument("mu0 and mu1 must be given together".into()))),
        }
        Ok(PyDataset { inner: ds })
    }

    /// Reads a CSV with `t`, `y`, optional `mu0`/`mu1` and covariate columns.
    /// With `min_frequency`, outcome values at least that frequent become atoms.
    #[staticmethod]
    #[pyo3(signature = (path, min_frequency=None))]
    fn read_csv(path: &str, min_frequency: Option<f64>) -> PyResult<Self> {
        let atoms = min_frequency.map_or(AtomSpec::None, |min_frequency| AtomSpec::Auto { min_frequency });
        Ok(PyDataset {
            inner: io::load_dataset(path, &atoms).or_raise()?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        io::save_dataset(&self.inner, path).or_raise()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, d={})", self.inner.n(), self.inner.d())
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.w)
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.t.clone()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    #[getter]
    fn atoms(&self) -> Vec<f64> {
        self.inner.atoms.clone()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.clone()
    }

    #[getter]
    fn mu0(&self) -> Option<Vec<f64>> {
        self.inner.effects.as_ref().map(|e| e.mu0.clone())
    }

    #[getter]
    fn mu1(&self) -> Option<Vec<f64>> {
        self.inner.effects.as_ref().map(|e| e.mu1.clone())
    }
}

#[pyclass(name = "Model", module = "pycausebench", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: GenerativeModel,
}

#[pymethods]
impl PyModel {
    /// Fits a model. `config` is a JSON object with the keys of the `[fit]`
    /// table; `seed` overrides its seed.
    #[staticmethod]
    #[pyo3(signature = (data, config=None, seed=None, allow_unrealistic=false))]
    fn fit(
        py: Python<'_>,
        data: &PyDataset,
        config: Option<&str>,
        seed: Option<u64>,
        allow_unrealistic: bool,
    ) -> PyResult<Self> {
        let mut cfg: FitConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(config_err)?,
            None => FitConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let ds = &data.inner;
        match py.detach(|| model::fit(ds, &cfg)) {
            Ok(m) => Ok(PyModel { inner: m }),
            Err(Error::NoRealisticModel { best, .. }) if allow_unrealistic => Ok(PyModel { inner: *best }),
            Err(e) => Err(raise(e)),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: model::load(path).or_raise()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: model::from_json(text).or_raise()?,
        })
    }

    /// Logistic propensity and Gaussian outcomes with linear means, on
    /// unscaled covariates.
    #[staticmethod]
    #[pyo3(signature = (
        covariates, treatment, treatment_intercept, outcome0, outcome0_intercept, outcome1, outcome1_intercept,
        log_variance=(0.0, 0.0)
    ))]
    #[allow(clippy::too_many_arguments)]
    fn linear_gaussian(
        covariates: Vec<Vec<f64>>,
        treatment: Vec<f64>,
        treatment_intercept: f64,
        outcome0: Vec<f64>,
        outcome0_intercept: f64,
        outcome1: Vec<f64>,
        outcome1_intercept: f64,
        log_variance: (f64, f64),
    ) -> PyResult<Self> {
        let head = |coefficients, intercept| LinearHead { coefficients, intercept };
        let m = GenerativeModel::linear_gaussian(
            matrix(covariates)?,
            head(treatment, treatment_intercept),
            [head(outcome0, outcome0_intercept), head(outcome1, outcome1_intercept)],
            [log_variance.0, log_variance.1],
        )
        .or_raise()?;
        Ok(PyModel { inner: m })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save(&self.inner, path).or_raise()
    }

    fn to_json(&self) -> PyResult<String> {
        model::to_json(&self.inner).or_raise()
    }

    fn sample(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<PyDataset> {
        let m = &self.inner;
        Ok(PyDataset {
            inner: py.detach(|| m.sample(n, seed)).or_raise()?,
        })
    }

    /// Draws `(t, y)` at the given covariate rows.
    fn sample_at(&self, w: Vec<Vec<f64>>, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.inner.sample_at(&matrix(w)?, seed).or_raise()
    }

    fn ground_truth<'py>(&self, py: Python<'py>, w: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let gt = self.inner.ground_truth(&matrix(w)?).or_raise()?;
        let d = PyDict::new(py);
        d.set_item("ate", gt.ate)?;
        d.set_item("iate", gt.iate)?;
        d.set_item("propensity", gt.propensity)?;
        d.set_item("mu0", gt.mu0)?;
        d.set_item("mu1", gt.mu1)?;
        Ok(d)
    }

    fn propensities(&self, w: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.propensities(&matrix(w)?).or_raise()
    }

    #[pyo3(signature = (positivity_alpha=1.0, effect_delta=0.0, heterogeneity_lambda=1.0))]
    fn with_knobs(&self, positivity_alpha: f64, effect_delta: f64, heterogeneity_lambda: f64) -> PyResult<Self> {
        let knobs = KnobConfig {
            positivity_alpha,
            effect_delta,
            heterogeneity_lambda,
        };
        Ok(PyModel {
            inner: self.inner.apply_knobs(knobs).or_raise()?,
        })
    }

    #[getter]
    fn n_covariates(&self) -> usize {
        self.inner.n_covariates()
    }

    #[getter]
    fn atoms(&self) -> Vec<f64> {
        self.inner.atoms.clone()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.clone()
    }

    #[getter]
    fn gate_p_value(&self) -> Option<f64> {
        self.inner.metadata.gate_p_value
    }

    #[getter]
    fn knobs(&self) -> (f64, f64, f64) {
        let k = self.inner.knobs;
        (k.positivity_alpha, k.effect_delta, k.heterogeneity_lambda)
    }

    fn __repr__(&self) -> String {
        let arch = self.inner.metadata.architecture.as_ref().map_or("linear".to_string(), |a| format!("{a:?}"));
        format!("Model(d={}, {arch})", self.inner.n_covariates())
    }
}

fn report_dict<'py>(py: Python<'py>, r: TestReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("test", r.test)?;
    d.set_item("statistic", r.statistic)?;
    d.set_item("p_value", r.p_value)?;
    d.set_item("permutations", r.permutations)?;
    d.set_item("seed", r.seed)?;
    d.set_item("method", r.method)?;
    Ok(d)
}

fn single_column(m: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let m = matrix(m)?;
    if m.ncols() != 1 {
        return Err(raise(Error::Shape(format!("expected one column, got {}", m.ncols()))));
    }
    Ok(m.column(0).to_vec())
}

/// Two-sample test between the rows of `x` and `y`. `test` is `ks`, `es`
/// (one column), `energy`, `fr`, `knn`, `wass1` or `wass2`.
#[pyfunction]
#[pyo3(signature = (x, y, test, permutations=1000, seed=0, k=1))]
fn two_sample_test<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    test: &str,
    permutations: usize,
    seed: u64,
    k: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let stat = match test {
        "ks" => return report_dict(py, ks_test(&single_column(x)?, &single_column(y)?).or_raise()?),
        "es" => return report_dict(py, es_test(&single_column(x)?, &single_column(y)?).or_raise()?),
        "energy" => Statistic::Energy,
        "fr" => Statistic::FriedmanRafsky,
        "knn" => Statistic::Knn { k },
        "wass1" => Statistic::Wasserstein { order: 1 },
        "wass2" => Statistic::Wasserstein { order: 2 },
        other => return Err(raise(Error::InvalidArgument(format!("unknown two-sample test `{other}`")))),
    };
    let xs = SampleMatrix::new(matrix(x)?).or_raise()?;
    let ys = SampleMatrix::new(matrix(y)?).or_raise()?;
    let r = py.detach(|| permutation_test_with(&xs, &ys, stat, permutations, seed)).or_raise()?;
    report_dict(py, r)
}

/// Runs one estimator identifier such as `gcom/ridge?tune=true`.
/// `propensity` feeds `ipw/oracle`.
#[pyfunction]
#[pyo3(signature = (estimator, data, propensity=None))]
fn estimate<'py>(
    py: Python<'py>,
    estimator: &str,
    data: &PyDataset,
    propensity: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = EstimatorSpec::parse(estimator).or_raise()?;
    let ds = &data.inner;
    let r = py.detach(|| spec.estimate(ds, propensity.as_deref())).or_raise()?;
    let d = PyDict::new(py);
    d.set_item("ate", r.ate)?;
    d.set_item("iate", r.iate)?;
    d.set_item("n_trimmed", r.diagnostics.n_trimmed)?;
    d.set_item("warnings", r.diagnostics.warnings)?;
    d.set_item("models", r.diagnostics.models)?;
    Ok(d)
}

fn metric_dict<'py>(py: Python<'py>, r: MetricRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("estimator", r.estimator)?;
    d.set_item("bias", r.bias)?;
    d.set_item("abs_bias", r.abs_bias)?;
    d.set_item("std", r.std)?;
    d.set_item("rmse", r.rmse)?;
    d.set_item("mean_pehe", r.mean_pehe)?;
    d.set_item("n_failures", r.n_failures)?;
    Ok(d)
}

/// Benchmarks estimators over replications sampled from `model`.
#[pyfunction]
#[pyo3(signature = (model, estimators, replications=100, samples=None, seed=0))]
fn benchmark<'py>(
    py: Python<'py>,
    model: &PyModel,
    estimators: Vec<String>,
    replications: usize,
    samples: Option<usize>,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = BenchmarkConfig {
        replications,
        samples,
        estimators,
        base_seed: seed,
    };
    let m = &model.inner;
    let table = py.detach(|| run_benchmark(m, &cfg)).or_raise()?;
    table.into_iter().map(|r| metric_dict(py, r)).collect()
}

fn fidelity_dict<'py>(py: Python<'py>, rep: FidelityReport) -> PyResult<Bound<'py, PyDict>> {
    let mut out = Vec::with_capacity(rep.rows.len());
    for r in rep.rows {
        let d = PyDict::new(py);
        d.set_item("variables", r.variables)?;
        d.set_item("test", r.test)?;
        d.set_item("statistic", r.statistic)?;
        d.set_item("p_value", r.p_value)?;
        d.set_item("method", r.method)?;
        d.set_item("permutations", r.permutations)?;
        d.set_item("seed", r.seed)?;
        out.push(d);
    }
    let d = PyDict::new(py);
    d.set_item("rows", out)?;
    match rep.effects {
        Some(e) => {
            let eff = PyDict::new(py);
            eff.set_item("true_ate", e.true_ate)?;
            eff.set_item("model_ate", e.model_ate)?;
            eff.set_item("abs_bias", e.abs_bias)?;
            eff.set_item("pehe", e.pehe)?;
            d.set_item("effects", eff)?;
        }
        None => d.set_item("effects", py.None())?,
    }
    Ok(d)
}

/// Two-sample battery comparing held-out `data` with model draws at its
/// covariates. `tests` holds strings such as `ks:y` or `energy:wty`.
#[pyfunction]
#[pyo3(signature = (model, data, permutations=1000, seed=0, tests=None, knn_k=1))]
fn fidelity<'py>(
    py: Python<'py>,
    model: &PyModel,
    data: &PyDataset,
    permutations: usize,
    seed: u64,
    tests: Option<Vec<String>>,
    knn_k: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let tests = match tests {
        Some(t) => t.iter().map(|s| s.parse::<TestSelection>()).collect::<causebench::Result<_>>().or_raise()?,
        None => TestSelection::default_battery(),
    };
    let cfg = FidelityConfig {
        permutations,
        seed,
        knn_k,
        tests,
    };
    let (m, ds) = (&model.inner, &data.inner);
    let rep = py.detach(|| fidelity_report(m, ds, &cfg)).or_raise()?;
    fidelity_dict(py, rep)
}

#[pyfunction(name = "ate_metrics")]
fn ate_metrics_py<'py>(py: Python<'py>, estimates: Vec<f64>, truths: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let m = ate_metrics(&estimates, &truths).or_raise()?;
    let d = PyDict::new(py);
    d.set_item("bias", m.bias)?;
    d.set_item("abs_bias", m.abs_bias)?;
    d.set_item("std", m.std)?;
    d.set_item("rmse", m.rmse)?;
    Ok(d)
}

#[pyfunction(name = "pehe")]
fn pehe_py(iate_hat: Vec<f64>, iate_true: Vec<f64>) -> PyResult<f64> {
    pehe(&iate_hat, &iate_true).or_raise()
}

#[pymodule]
fn pycausebench(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CausebenchError", m.py().get_type::<CausebenchError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(two_sample_test, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(ate_metrics_py, m)?)?;
    m.add_function(wrap_pyfunction!(pehe_py, m)?)?;
    Ok(())
}
