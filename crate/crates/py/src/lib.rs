//! Python bindings: model building and evaluation, datasets, training,
//! capacity analytics and the two-node executor.
//!
//! Build with `maturin develop` (or `pip install ./crates/py`) and run
//! `python python/smoke_test.py`.

use dqml_core::circuits::{build_model as core_build_model, forward, forward_branching, to_deferred, Instance, ModelSpec, PoolingKind, Program, SchemeKind};
use dqml_core::datagen::{make_dataset as core_make_dataset, Split, SyntheticDataset};
use dqml_core::distexec::{self, ClassicalMessage, DistConfig, ExecMode, TransportKind};
use dqml_core::fisher::{self, CapacityConfig};
use dqml_core::training::{self, InterpretMode, TrainConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};
use serde::Serialize;

fn err(e: dqml_core::Error) -> PyErr {
    use dqml_core::Error as E;
    match e {
        E::Protocol(_) | E::Frame(_) | E::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(json_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let dict = PyDict::new(py);
            for (k, x) in o {
                dict.set_item(k, json_to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn parse_scheme(s: &str) -> PyResult<SchemeKind> {
    s.parse().map_err(err)
}

fn parse_pooling(s: &str) -> PyResult<PoolingKind> {
    match s {
        "standard" => Ok(PoolingKind::Standard),
        "dumb" => Ok(PoolingKind::Dumb),
        other => Err(PyValueError::new_err(format!("unknown pooling '{other}' (standard or dumb)"))),
    }
}

/// A built QCNN model.
#[pyclass(name = "Model", frozen)]
pub struct PyModel {
    inner: ModelSpec,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn scheme(&self) -> String {
        self.inner.scheme.to_string()
    }

    #[getter]
    fn param_slots(&self) -> usize {
        self.inner.param_slots
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.inner.n_qubits()
    }

    #[getter]
    fn n_attributes(&self) -> usize {
        self.inner.n_attributes()
    }

    #[getter]
    fn readout_qubits(&self) -> Vec<usize> {
        self.inner.readout_qubits.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Readout distribution by branch enumeration over mid-circuit outcomes.
    fn forward(&self, params: Vec<f64>, attributes: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(forward(&self.inner, &params, &Instance::Attributes(attributes)).map_err(err)?.into_probs())
    }

    /// Readout distribution and number of enumerated branches.
    fn forward_branching(&self, params: Vec<f64>, attributes: Vec<f64>) -> PyResult<(Vec<f64>, usize)> {
        let run = forward_branching(&self.inner, &params, &Instance::Attributes(attributes)).map_err(err)?;
        Ok((run.distribution.into_probs(), run.leaves))
    }

    /// Readout distribution and its Jacobian (outcomes x parameters).
    fn jacobian(&self, params: Vec<f64>, attributes: Vec<f64>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let program = Program::compile(&to_deferred(&self.inner)).map_err(err)?;
        let (p, jac) = program.probs_and_jacobian(&params, &Instance::Attributes(attributes)).map_err(err)?;
        Ok((p, jac.row_iter().map(|r| r.iter().copied().collect()).collect()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(scheme={}, qubits={}, L={}, param_slots={})",
            self.inner.scheme,
            self.inner.n_qubits(),
            self.inner.sublayers,
            self.inner.param_slots
        )
    }
}

#[pyfunction]
#[pyo3(signature = (scheme, qubits_per_qpu = 4, sublayers = 1, pooling = "standard"))]
fn build_model(scheme: &str, qubits_per_qpu: usize, sublayers: usize, pooling: &str) -> PyResult<PyModel> {
    let inner = core_build_model(parse_scheme(scheme)?, qubits_per_qpu, sublayers, parse_pooling(pooling)?).map_err(err)?;
    Ok(PyModel { inner })
}

/// A synthetic clustered dataset.
#[pyclass(name = "Dataset", frozen)]
pub struct PyDataset {
    inner: SyntheticDataset,
}

fn parse_split(split: Option<&str>) -> PyResult<Option<Split>> {
    match split {
        None => Ok(None),
        Some("train") => Ok(Some(Split::Train)),
        Some("validation") => Ok(Some(Split::Validation)),
        Some(other) => Err(PyValueError::new_err(format!("unknown split '{other}'"))),
    }
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[pyo3(signature = (split = None))]
    fn features(&self, split: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
        let s = parse_split(split)?;
        Ok(self.inner.samples.iter().filter(|x| s.is_none_or(|s| x.split == s)).map(|x| x.x.clone()).collect())
    }

    #[pyo3(signature = (split = None))]
    fn labels(&self, split: Option<&str>) -> PyResult<Vec<i8>> {
        let s = parse_split(split)?;
        Ok(self.inner.samples.iter().filter(|x| s.is_none_or(|s| x.split == s)).map(|x| x.label).collect())
    }

    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.meta)
    }

    /// Writes the CSV and its JSON sidecar; returns the sidecar path.
    fn save(&self, path: &str) -> PyResult<String> {
        Ok(self.inner.save(std::path::Path::new(path)).map_err(err)?.to_string_lossy().into_owned())
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: SyntheticDataset::load(std::path::Path::new(path)).map_err(err)? })
    }
}

#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn make_dataset(seed: u64) -> PyDataset {
    PyDataset { inner: core_make_dataset(seed) }
}

/// Trains `trials` independent runs; returns one record per trial.
#[pyfunction]
#[pyo3(signature = (model, dataset, iterations = 1000, trials = 1, seed = 0, batch_size = 512, step_size = 0.05, parity_fixed = false))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    model: &PyModel,
    dataset: &PyDataset,
    iterations: usize,
    trials: usize,
    seed: u64,
    batch_size: usize,
    step_size: f64,
    parity_fixed: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = TrainConfig {
        iterations,
        trials,
        seed,
        batch_size,
        step_size,
        interpret_mode: if parity_fixed { InterpretMode::ParityFixed } else { InterpretMode::Trained },
        ..TrainConfig::default()
    };
    let records = training::train(&model.inner, &dataset.inner, &cfg).map_err(err)?;
    to_py(py, &records)
}

#[allow(clippy::too_many_arguments)]
fn capacity(
    scheme: &str,
    qubits_per_qpu: usize,
    sublayers: usize,
    n_theta: usize,
    n_samples: usize,
    dumb_pooling: bool,
    theta_seed: u64,
    data_seed: u64,
) -> PyResult<CapacityConfig> {
    Ok(CapacityConfig {
        pooling: if dumb_pooling { PoolingKind::Dumb } else { PoolingKind::Standard },
        n_theta,
        n_samples,
        theta_seed,
        data_seed,
        ..CapacityConfig::new(parse_scheme(scheme)?, qubits_per_qpu, sublayers)
    })
}

/// Maximum Fisher rank over sampled parameter sets, with per-set ranks.
#[pyfunction]
#[pyo3(signature = (scheme, qubits_per_qpu = 2, sublayers = 1, n_theta = 20, n_samples = 500, dumb_pooling = false, theta_seed = 0, data_seed = 1))]
#[allow(clippy::too_many_arguments)]
fn effective_dimension<'py>(
    py: Python<'py>,
    scheme: &str,
    qubits_per_qpu: usize,
    sublayers: usize,
    n_theta: usize,
    n_samples: usize,
    dumb_pooling: bool,
    theta_seed: u64,
    data_seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = capacity(scheme, qubits_per_qpu, sublayers, n_theta, n_samples, dumb_pooling, theta_seed, data_seed)?;
    to_py(py, &fisher::effective_dimension(&cfg).map_err(err)?)
}

/// Pooled nonzero Fisher eigenvalue statistics and log10 histogram.
#[pyfunction]
#[pyo3(signature = (scheme, qubits_per_qpu = 2, sublayers = 1, n_theta = 20, n_samples = 500, theta_seed = 0, data_seed = 1))]
#[allow(clippy::too_many_arguments)]
fn spectrum<'py>(
    py: Python<'py>,
    scheme: &str,
    qubits_per_qpu: usize,
    sublayers: usize,
    n_theta: usize,
    n_samples: usize,
    theta_seed: u64,
    data_seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = capacity(scheme, qubits_per_qpu, sublayers, n_theta, n_samples, false, theta_seed, data_seed)?;
    to_py(py, &fisher::spectrum_statistics(&cfg).map_err(err)?)
}

/// Runs an NC or CC model on two nodes. `port=None` uses in-process
/// channels, otherwise loopback TCP (0 picks a free port).
#[pyfunction]
#[pyo3(signature = (model, params, attributes, port = None, threaded = false))]
fn run_distributed<'py>(
    py: Python<'py>,
    model: &PyModel,
    params: Vec<f64>,
    attributes: Vec<f64>,
    port: Option<u16>,
    threaded: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = DistConfig {
        mode: if threaded { ExecMode::Threaded } else { ExecMode::Sequential },
        transport: port.map_or(TransportKind::InProcess, |port| TransportKind::Loopback { port }),
    };
    let run = distexec::run_distributed(&model.inner, &params, &Instance::Attributes(attributes), &cfg).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("distribution", run.distribution.probs().to_vec())?;
    out.set_item("joint_branches", run.ledger.branches.len())?;
    out.set_item("total_probability", run.ledger.total_probability)?;
    out.set_item("transcript", to_py(py, &run.transcript)?)?;
    out.set_item("stats", to_py(py, &run.stats)?)?;
    Ok(out.into_any())
}

#[pyfunction]
fn encode_message<'py>(
    py: Python<'py>,
    sequence_no: u32,
    sender: u8,
    branch_path: Vec<u8>,
    outcome: u8,
    branch_probability_factor: f64,
) -> PyResult<Bound<'py, PyBytes>> {
    let msg = ClassicalMessage { sequence_no, sender, branch_path, outcome, branch_probability_factor };
    Ok(PyBytes::new(py, &distexec::encode_message(&msg).map_err(err)?))
}

#[pyfunction]
fn decode_message<'py>(py: Python<'py>, frame: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &distexec::decode_message(frame).map_err(err)?)
}

#[pymodule]
fn dqml(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", dqml_core::VERSION)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(build_model, m)?)?;
    m.add_function(wrap_pyfunction!(make_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(effective_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(run_distributed, m)?)?;
    m.add_function(wrap_pyfunction!(encode_message, m)?)?;
    m.add_function(wrap_pyfunction!(decode_message, m)?)?;
    Ok(())
}
