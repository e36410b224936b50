//! Python bindings. Series cross the boundary as lists of rows; reports come
//! back as plain dicts decoded from the same JSON the CLI writes.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vsfa_core::elbo;
use vsfa_core::linalg::Matrix;
use vsfa_core::linear_vsfa;
use vsfa_core::model::Model;
use vsfa_core::rng;
use vsfa_core::series::{self, GeneratorSpec, Mixing, TimeSeries};
use vsfa_core::sfa_classic;
use vsfa_core::train::{BatchMode, ModelKind, OptimizerConfig, TrainConfig};

type Rows = Vec<Vec<f64>>;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn series_from(rows: Rows) -> PyResult<TimeSeries> {
    TimeSeries::from_rows(&rows).map_err(err)
}

fn rows_of(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn to_py_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A trained or fitted model (`linear`, `mlp` or `sfa`).
#[pyclass(name = "Model", module = "vsfa", frozen)]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: Model = serde_json::from_str(text).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Model::load(path).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    /// Encoded features, one row per time step.
    fn features(&self, x: Rows) -> PyResult<Rows> {
        Ok(rows_of(&self.inner.features(&series_from(x)?).map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind='{}', input_dim={}, latent_dim={})",
            self.inner.kind(),
            self.inner.input_dim(),
            self.inner.latent_dim()
        )
    }
}

impl PyModel {
    fn linear(&self) -> PyResult<&linear_vsfa::LinearVsfaParams> {
        match &self.inner {
            Model::Linear(p) => Ok(p),
            other => Err(PyValueError::new_err(format!(
                "expected a linear model, got {}",
                other.kind()
            ))),
        }
    }
}

/// Returns `(drivers, observed)` as lists of rows.
#[pyfunction]
#[pyo3(signature = (t, slow, timescales, n, mix="linear", noise=0.0, seed=0))]
fn generate(
    t: usize,
    slow: usize,
    timescales: Vec<f64>,
    n: usize,
    mix: &str,
    noise: f64,
    seed: u64,
) -> PyResult<(Rows, Rows)> {
    let mixing = match mix {
        "linear" => Mixing::Linear(series::random_mixing(n, slow, seed)),
        "polynomial" => Mixing::Polynomial(series::random_mixing(n, series::polynomial_feature_count(slow), seed)),
        other => return Err(PyValueError::new_err(format!("unknown mixing '{other}'"))),
    };
    let spec = GeneratorSpec {
        t,
        d_slow: slow,
        timescales,
        mixing,
        noise_std: noise,
        seed,
    };
    let (z, x) = series::generate(&spec).map_err(err)?;
    Ok((rows_of(z.as_matrix()), rows_of(x.as_matrix())))
}

/// Mean, covariance, lag-one covariance and difference covariance.
#[pyfunction]
fn moments<'py>(py: Python<'py>, x: Rows) -> PyResult<Bound<'py, PyAny>> {
    let m = series::moments(&series_from(x)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mean", m.mean.clone())?;
    d.set_item("c", rows_of(&m.c))?;
    d.set_item("c_lag", rows_of(&m.c_lag))?;
    d.set_item("c_dot", rows_of(&m.c_dot))?;
    d.set_item("samples", m.samples)?;
    Ok(d.into_any())
}

/// Per-column mean squared one-step difference.
#[pyfunction]
fn slowness(features: Rows) -> PyResult<Vec<f64>> {
    let m = Matrix::from_rows(&features).map_err(err)?;
    sfa_classic::slowness(&m).map_err(err)
}

/// Classic SFA with `k` output features.
#[pyfunction]
fn sfa_fit(x: Rows, k: usize) -> PyResult<PyModel> {
    let model = sfa_classic::fit(&series_from(x)?, k).map_err(err)?;
    Ok(PyModel {
        inner: Model::Sfa(model),
    })
}

/// Trains a linear or MLP model; returns `(model, report)`.
#[pyfunction]
#[pyo3(signature = (
    x, model="linear", hidden=vec![8, 4], latent_dim=2, beta=1.0, mc_samples=1, optimizer="adam",
    lr=1e-3, adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8, max_steps=20000, grad_tolerance=1e-7,
    window=None, seed=0, history_stride=100
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    x: Rows,
    model: &str,
    hidden: Vec<usize>,
    latent_dim: usize,
    beta: f64,
    mc_samples: usize,
    optimizer: &str,
    lr: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    max_steps: usize,
    grad_tolerance: f64,
    window: Option<(usize, usize)>,
    seed: u64,
    history_stride: usize,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let cfg = TrainConfig {
        model: match model {
            "linear" => ModelKind::Linear,
            "mlp" => ModelKind::Mlp { hidden },
            other => return Err(PyValueError::new_err(format!("unknown model '{other}'"))),
        },
        latent_dim,
        beta,
        mc_samples,
        optimizer: match optimizer {
            "sgd" => OptimizerConfig::Sgd { lr },
            "adam" => OptimizerConfig::Adam {
                lr,
                beta1: adam_beta1,
                beta2: adam_beta2,
                eps: adam_eps,
            },
            other => return Err(PyValueError::new_err(format!("unknown optimizer '{other}'"))),
        },
        max_steps,
        grad_tolerance,
        batch: match window {
            Some((length, stride)) => BatchMode::Windows { length, stride },
            None => BatchMode::Full,
        },
        seed,
        history_stride,
    };
    let x = series_from(x)?;
    let report = py.detach(|| vsfa_core::train::train(&cfg, &x)).map_err(err)?;
    let dict = to_py_json(py, &report)?;
    Ok((PyModel { inner: report.model }, dict))
}

/// Feature statistics; `drivers` adds driver correlations, `compare_sfa` principal angles.
#[pyfunction]
#[pyo3(signature = (model, x, drivers=None, compare_sfa=false))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    x: Rows,
    drivers: Option<Rows>,
    compare_sfa: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let x = series_from(x)?;
    let drivers = drivers.map(series_from).transpose()?;
    let metrics = vsfa_core::train::evaluate(&model.inner, &x, drivers.as_ref(), compare_sfa).map_err(err)?;
    to_py_json(py, &metrics)
}

/// `(r_cond, r_offset)` for a linear model.
#[pyfunction]
#[pyo3(signature = (model, x, beta=1.0))]
fn stationarity_residual(model: &PyModel, x: Rows, beta: f64) -> PyResult<(f64, f64)> {
    let m = series::moments(&series_from(x)?).map_err(err)?;
    let r = linear_vsfa::stationarity_residual_weighted(model.linear()?, &m, beta).map_err(err)?;
    Ok((r.r_cond, r.r_offset))
}

/// Exact linear objective from moments.
#[pyfunction]
fn closed_form_objective(model: &PyModel, x: Rows) -> PyResult<f64> {
    let m = series::moments(&series_from(x)?).map_err(err)?;
    linear_vsfa::closed_form_objective(model.linear()?, &m).map_err(err)
}

/// The same objective summed sample by sample.
#[pyfunction]
fn per_sample_objective(model: &PyModel, x: Rows) -> PyResult<f64> {
    linear_vsfa::per_sample_objective(model.linear()?, &series_from(x)?).map_err(err)
}

/// Monte-Carlo ELBO with exact slowness term.
#[pyfunction(name = "elbo")]
#[pyo3(signature = (model, x, beta=1.0, samples=100, seed=0))]
fn elbo_estimate<'py>(
    py: Python<'py>,
    model: &PyModel,
    x: Rows,
    beta: f64,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let (enc, dec) = match (model.inner.encoder(), model.inner.decoder()) {
        (Some(e), Some(d)) => (e, d),
        _ => return Err(PyValueError::new_err("sfa models have no ELBO")),
    };
    let b = elbo::elbo(&enc, &dec, &series_from(x)?, beta, samples, seed).map_err(err)?;
    to_py_json(py, &b)
}

/// Rolls the prior from `z1` for `t` steps; returns `(latents, decoded)`.
#[pyfunction]
#[pyo3(signature = (model, z1, t, seed=0))]
fn sample(model: &PyModel, z1: Vec<f64>, t: usize, seed: u64) -> PyResult<(Rows, Rows)> {
    let dec = model
        .inner
        .decoder()
        .ok_or_else(|| PyValueError::new_err("sfa models have no decoder"))?;
    let mut g = rng::stream(seed, rng::streams::PRIOR_SAMPLING);
    let (z, x) = elbo::sample_generative(&dec, &z1, t, &mut g).map_err(err)?;
    Ok((rows_of(&z), rows_of(&x)))
}

#[pymodule]
fn vsfa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(slowness, m)?)?;
    m.add_function(wrap_pyfunction!(sfa_fit, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(stationarity_residual, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_objective, m)?)?;
    m.add_function(wrap_pyfunction!(per_sample_objective, m)?)?;
    m.add_function(wrap_pyfunction!(elbo_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    Ok(())
}
