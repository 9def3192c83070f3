//! Python bindings: losses, hyperparameters, the MLP, datasets, training and
//! bound verification.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use arl_core::data::{self as core_data, NoiseKind, NoiseSpec, NoisyDataset};
use arl_core::losses::{self, HyperParams, LossEval, LossVariant, Probabilities};
use arl_core::meta::{self, HyperPolicy, TrainConfig};
use arl_core::model::{self, Activation, Matrix, MlpParams};
use arl_core::{theory, ArlError};

fn to_py(err: ArlError) -> PyErr {
    match err {
        ArlError::Numeric(_) => PyArithmeticError::new_err(err.to_string()),
        ArlError::Io { .. } => PyOSError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for arl_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).py()
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Loss value with gradients with respect to the logits and the hyperparameters.
#[pyclass(name = "LossEval", frozen, get_all)]
struct PyLossEval {
    value: f64,
    grad_logits: Vec<f64>,
    grad_hyper: Vec<f64>,
}

impl From<LossEval> for PyLossEval {
    fn from(e: LossEval) -> Self {
        PyLossEval {
            value: e.value,
            grad_logits: e.grad_logits,
            grad_hyper: e.grad_hyper,
        }
    }
}

#[pymethods]
impl PyLossEval {
    fn __repr__(&self) -> String {
        format!("LossEval(value={}, grad_logits={:?}, grad_hyper={:?})", self.value, self.grad_logits, self.grad_hyper)
    }
}

fn probs(p: Vec<f64>) -> PyResult<Probabilities> {
    Probabilities::new(p).py()
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(losses::softmax(&logits).py()?.into_vec())
}

#[pyfunction]
fn ce(p: Vec<f64>, label: usize) -> PyResult<PyLossEval> {
    Ok(losses::ce(&probs(p)?, label).py()?.into())
}

#[pyfunction]
fn gce(p: Vec<f64>, label: usize, q: f64) -> PyResult<PyLossEval> {
    Ok(losses::gce(&probs(p)?, label, q).py()?.into())
}

#[pyfunction]
#[pyo3(signature = (p, label, rce_a = losses::DEFAULT_RCE_A))]
fn rce(p: Vec<f64>, label: usize, rce_a: f64) -> PyResult<PyLossEval> {
    Ok(losses::rce(&probs(p)?, label, rce_a).py()?.into())
}

#[pyfunction]
#[pyo3(signature = (p, label, gamma1, gamma2, rce_a = losses::DEFAULT_RCE_A))]
fn sl(p: Vec<f64>, label: usize, gamma1: f64, gamma2: f64, rce_a: f64) -> PyResult<PyLossEval> {
    Ok(losses::sl(&probs(p)?, label, gamma1, gamma2, rce_a).py()?.into())
}

#[pyfunction]
fn log_t(x: f64, t: f64) -> PyResult<f64> {
    losses::log_t(x, t).py()
}

#[pyfunction]
fn exp_t(x: f64, t: f64) -> f64 {
    losses::exp_t(x, t)
}

/// Returns `(probabilities, normalizer)`.
#[pyfunction]
fn tempered_softmax(logits: Vec<f64>, t2: f64) -> PyResult<(Vec<f64>, f64)> {
    let (p, gamma) = losses::tempered_softmax(&logits, t2).py()?;
    Ok((p.into_vec(), gamma))
}

#[pyfunction]
fn bi_tempered(logits: Vec<f64>, label: usize, t1: f64, t2: f64) -> PyResult<PyLossEval> {
    Ok(losses::bi_tempered(&logits, label, t1, t2).py()?.into())
}

#[pyfunction]
#[pyo3(signature = (ce_value, lambda_, d))]
fn polysoft(ce_value: f64, lambda_: f64, d: f64) -> PyResult<PyLossEval> {
    Ok(losses::polysoft(ce_value, lambda_, d).py()?.into())
}

#[pyfunction]
#[pyo3(signature = (ce_value, lambda_, d))]
fn polysoft_weight(ce_value: f64, lambda_: f64, d: f64) -> PyResult<f64> {
    losses::polysoft_weight(ce_value, lambda_, d).py()
}

/// Loss hyperparameters for one variant.
#[pyclass(name = "HyperParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHyperParams {
    inner: HyperParams,
}

fn checked(h: HyperParams) -> PyResult<PyHyperParams> {
    h.validate().py()?;
    Ok(PyHyperParams { inner: h })
}

#[pymethods]
impl PyHyperParams {
    #[staticmethod]
    fn ce() -> Self {
        PyHyperParams { inner: HyperParams::Ce }
    }

    #[staticmethod]
    fn gce(q: f64) -> PyResult<Self> {
        checked(HyperParams::Gce { q })
    }

    #[staticmethod]
    #[pyo3(signature = (gamma1, gamma2, rce_a = losses::DEFAULT_RCE_A))]
    fn sl(gamma1: f64, gamma2: f64, rce_a: f64) -> PyResult<Self> {
        checked(HyperParams::Sl { gamma1, gamma2, rce_a })
    }

    #[staticmethod]
    fn bi_tempered(t1: f64, t2: f64) -> PyResult<Self> {
        checked(HyperParams::BiTempered { t1, t2 })
    }

    #[staticmethod]
    #[pyo3(signature = (lambda_, d))]
    fn poly_soft(lambda_: f64, d: f64) -> PyResult<Self> {
        checked(HyperParams::PolySoft { lambda: lambda_, d })
    }

    /// Default starting point for `variant` ("ce", "gce", "sl", "bi_tempered", "poly_soft").
    #[staticmethod]
    fn initial(variant: &str, num_classes: usize) -> PyResult<Self> {
        Ok(PyHyperParams {
            inner: HyperParams::initial(LossVariant::parse(variant).py()?, num_classes),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let h: HyperParams = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        checked(h)
    }

    /// Inverse of [`to_unconstrained`](Self::to_unconstrained), keeping this variant.
    #[allow(clippy::wrong_self_convention)]
    fn from_unconstrained(&self, theta: Vec<f64>) -> PyResult<Self> {
        let u = self.inner.to_unconstrained().py()?.with_theta(theta);
        checked(u.to_hyper().py()?)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_unconstrained(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.to_unconstrained().py()?.theta)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant().name()
    }

    #[getter]
    fn names(&self) -> Vec<&'static str> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values()
    }

    /// Loss and gradients for one sample's logits.
    fn evaluate(&self, logits: Vec<f64>, label: usize) -> PyResult<PyLossEval> {
        Ok(losses::evaluate(&self.inner, &logits, label).py()?.into())
    }

    fn __eq__(&self, other: PyRef<'_, Self>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("HyperParams({:?})", self.inner)
    }
}

/// Fully connected classifier parameters.
#[pyclass(name = "Mlp", frozen)]
struct PyMlp {
    inner: MlpParams,
}

fn activation(name: &str) -> PyResult<Activation> {
    match name {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(PyValueError::new_err(format!("unknown activation '{other}'"))),
    }
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (sizes, activation_name = "tanh", seed = 0))]
    fn new(sizes: Vec<usize>, activation_name: &str, seed: u64) -> PyResult<Self> {
        Ok(PyMlp {
            inner: model::init_mlp(&sizes, activation(activation_name)?, seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMlp {
            inner: MlpParams::load_checkpoint(&path).py()?.0,
        })
    }

    #[pyo3(signature = (path, hyper = None))]
    fn save(&self, path: PathBuf, hyper: Option<PyRef<'_, PyHyperParams>>) -> PyResult<()> {
        self.inner.save_checkpoint(&path, hyper.map(|h| h.inner)).py()
    }

    fn forward(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&self.inner.forward_logits(&matrix(features)?).py()?))
    }

    /// Mean loss over a batch and its gradient as a flat parameter vector.
    fn loss_and_grad(&self, features: Vec<Vec<f64>>, labels: Vec<usize>, hyper: PyRef<'_, PyHyperParams>) -> PyResult<(f64, Vec<f64>)> {
        let x = matrix(features)?;
        let batch = meta::BatchRef {
            features: &x,
            labels: &labels,
        };
        let (loss, g) = meta::train_loss_and_grad(&self.inner, batch, &hyper.inner).py()?;
        Ok((loss, g.as_slice().to_vec()))
    }

    fn accuracy(&self, features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        meta::accuracy(&self.inner, &matrix(features)?, &labels).py()
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes().to_vec()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.as_slice().to_vec()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }
}

/// Features with observed and clean labels.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: NoisyDataset,
}

fn dataset(d: NoisyDataset) -> PyDataset {
    PyDataset { inner: d }
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (n, num_classes, dim = 2, spread = 0.5, seed = 0))]
    fn blobs(n: usize, num_classes: usize, dim: usize, spread: f64, seed: u64) -> PyResult<Self> {
        Ok(dataset(core_data::gen_blobs(n, num_classes, dim, spread, seed).py()?))
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(dataset(core_data::load_csv(&path).py()?))
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        core_data::write_csv(&self.inner, &path).py()
    }

    /// Injects label noise: `kind` is "symmetric", "asymmetric" or "hierarchical".
    #[pyo3(signature = (kind, rate, seed = 0, superclasses = None))]
    fn with_noise(&self, kind: &str, rate: f64, seed: u64, superclasses: Option<Vec<Vec<usize>>>) -> PyResult<Self> {
        let kind = match kind {
            "symmetric" => NoiseKind::Symmetric,
            "asymmetric" => NoiseKind::Asymmetric,
            "hierarchical" => NoiseKind::Hierarchical,
            other => return Err(PyValueError::new_err(format!("unknown noise kind '{other}'"))),
        };
        let spec = NoiseSpec {
            kind,
            rate,
            seed,
            exact_count: false,
            superclasses,
        };
        Ok(dataset(spec.apply(&self.inner).py()?))
    }

    /// Returns `(train, meta, test)`; meta and test carry clean labels.
    fn split(&self, meta_size: usize, test_size: usize, seed: u64) -> PyResult<(Self, Self, Self)> {
        let s = core_data::split_meta_sized(&self.inner, meta_size, test_size, seed).py()?;
        Ok((dataset(s.train), dataset(s.meta), dataset(s.test)))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.features)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn clean_labels(&self) -> Vec<usize> {
        self.inner.clean_labels.clone()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn flipped_fraction(&self) -> f64 {
        self.inner.flipped_fraction()
    }
}

/// Trains on `train`, learning the loss hyperparameters on `meta` when
/// `adaptive` is true. `config` is a JSON object with the training settings;
/// returns `(model, final_hyper, metrics)`.
#[pyfunction]
#[pyo3(signature = (train, meta_set, test, config, adaptive = true))]
fn train<'py>(
    py: Python<'py>,
    train: PyRef<'_, PyDataset>,
    meta_set: PyRef<'_, PyDataset>,
    test: PyRef<'_, PyDataset>,
    config: &str,
    adaptive: bool,
) -> PyResult<(PyMlp, PyHyperParams, Bound<'py, PyAny>)> {
    let cfg: TrainConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let policy = if adaptive { HyperPolicy::Adaptive } else { HyperPolicy::Fixed };
    let (tr, me, te) = (&train.inner, &meta_set.inner, &test.inner);
    let out = py.detach(|| meta::run(tr, me, te, &cfg, &policy)).py()?;
    let metrics = serialize(py, &out.metrics)?;
    Ok((PyMlp { inner: out.state.params }, PyHyperParams { inner: out.state.hyper }, metrics))
}

#[pyfunction]
fn sample_weights(mlp: PyRef<'_, PyMlp>, hyper: PyRef<'_, PyHyperParams>, data: PyRef<'_, PyDataset>) -> PyResult<Vec<f64>> {
    meta::compute_sample_weights(&mlp.inner, &hyper.inner, &data.inner).py()
}

/// `(A, A_prime)` for PolySoft or Bi-Tempered hyperparameters.
#[pyfunction]
fn bound_constants(num_classes: usize, eta: f64, hyper: PyRef<'_, PyHyperParams>) -> PyResult<(f64, f64)> {
    let b = theory::bound_constants(num_classes, eta, &hyper.inner).py()?;
    Ok((b.a, b.a_prime))
}

/// Grid-exact risk-gap check on `points` points; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (hyper, num_classes, eta, points = 4, delta = 0.02))]
fn verify_bounds<'py>(
    py: Python<'py>,
    hyper: PyRef<'_, PyHyperParams>,
    num_classes: usize,
    eta: f64,
    points: usize,
    delta: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let world = theory::FiniteWorld::balanced(points, num_classes, delta, eta).py()?;
    let h = hyper.inner;
    let report = py.detach(|| theory::riskgap_verify(&world, &h)).py()?;
    let out = serialize(py, &report)?;
    out.set_item("passed", report.passed())?;
    Ok(out)
}

#[pymodule]
fn arl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLossEval>()?;
    m.add_class::<PyHyperParams>()?;
    m.add_class::<PyMlp>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(ce, m)?)?;
    m.add_function(wrap_pyfunction!(gce, m)?)?;
    m.add_function(wrap_pyfunction!(rce, m)?)?;
    m.add_function(wrap_pyfunction!(sl, m)?)?;
    m.add_function(wrap_pyfunction!(log_t, m)?)?;
    m.add_function(wrap_pyfunction!(exp_t, m)?)?;
    m.add_function(wrap_pyfunction!(tempered_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(bi_tempered, m)?)?;
    m.add_function(wrap_pyfunction!(polysoft, m)?)?;
    m.add_function(wrap_pyfunction!(polysoft_weight, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sample_weights, m)?)?;
    m.add_function(wrap_pyfunction!(bound_constants, m)?)?;
    m.add_function(wrap_pyfunction!(verify_bounds, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
