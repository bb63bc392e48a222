//! Python bindings: spike rasters, networks, solvers, the error measure and
//! the embedded-pattern detection run.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use skim_core::eval::wills_error as core_wills;
use skim_core::io::{
    format_raster, load_network, network_from_json, network_to_json, parse_raster, save_network,
};
use skim_core::kernel::{eval_response as core_eval, KernelKind, KernelSpec};
use skim_core::patterns::gen_embedded_task as core_gen_task;
use skim_core::protocol::{
    json_bytes, recalibrate, run_pattern_task as core_run, PatternTaskConfig, ThresholdRule,
};
use skim_core::pruning::prune_two_pass as core_prune;
use skim_core::solver::{
    pseudoinverse as core_pinv, solve_batch as core_solve, solve_ridge as core_ridge,
};
use skim_core::train::{fit, fit_calibrated};
use skim_core::{
    ConfusionCounts, EmbeddedTaskParams, KernelFamily, NetworkParams, ParamRange, SkimError,
    SkimNetwork, SolveOptions, SolverKind, SpikeRaster, TargetSignal, TrainingSet,
};

fn py_err(e: SkimError) -> PyErr {
    match e {
        SkimError::Io(e) => PyOSError::new_err(e.to_string()),
        SkimError::State(_) | SkimError::Misuse(_) | SkimError::Degenerate(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows differ in length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn json_to_py<'py>(py: Python<'py>, bytes: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
    let text = String::from_utf8(bytes).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Events `(channel, step)` over `num_channels` inputs and `num_steps` steps.
#[pyclass(name = "SpikeRaster", module = "skim")]
struct PySpikeRaster {
    inner: SpikeRaster,
}

#[pymethods]
impl PySpikeRaster {
    #[new]
    fn new(num_channels: usize, num_steps: usize, events: Vec<(usize, usize)>) -> PyResult<Self> {
        let inner = SpikeRaster::new(num_channels, num_steps, events).map_err(py_err)?;
        Ok(PySpikeRaster { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PySpikeRaster {
            inner: parse_raster(text).map_err(py_err)?,
        })
    }

    fn to_text(&self) -> String {
        format_raster(&self.inner)
    }

    #[getter]
    fn num_channels(&self) -> usize {
        self.inner.num_channels()
    }

    #[getter]
    fn num_steps(&self) -> usize {
        self.inner.num_steps()
    }

    #[getter]
    fn events(&self) -> Vec<(usize, usize)> {
        self.inner.events().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "SpikeRaster(num_channels={}, num_steps={}, events={})",
            self.inner.num_channels(),
            self.inner.num_steps(),
            self.inner.len()
        )
    }
}

fn range(r: (f64, f64)) -> ParamRange {
    ParamRange::new(r.0, r.1)
}

fn training_set(
    inputs: Vec<PyRef<'_, PySpikeRaster>>,
    targets: Vec<Vec<Vec<f64>>>,
) -> PyResult<TrainingSet> {
    let rasters = inputs.iter().map(|r| r.inner.clone()).collect();
    let targets = targets
        .into_iter()
        .map(|t| TargetSignal::new(to_matrix(t)?).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    TrainingSet::new(rasters, targets).map_err(py_err)
}

/// A SKIM network: random input weights and kernels fixed at construction,
/// output weights solved by `fit`.
#[pyclass(name = "Network", module = "skim")]
struct PyNetwork {
    inner: SkimNetwork,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (
        num_inputs, num_dendrites, num_outputs = 1, kernel = "alpha", tau = (0.0, 100.0),
        delta_t = (0.0, 0.0), sigma = (0.0, 0.0), omega = (0.0, 0.0),
        weight_range = (-0.5, 0.5), threshold = 0.5, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_inputs: usize,
        num_dendrites: usize,
        num_outputs: usize,
        kernel: &str,
        tau: (f64, f64),
        delta_t: (f64, f64),
        sigma: (f64, f64),
        omega: (f64, f64),
        weight_range: (f64, f64),
        threshold: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let kind: KernelKind = kernel.parse().map_err(py_err)?;
        let family = KernelFamily {
            kind,
            tau: range(tau),
            delta_t: range(delta_t),
            sigma: range(sigma),
            omega: range(omega),
            ..KernelFamily::alpha(range(tau))
        };
        let params = NetworkParams {
            weight_range,
            threshold,
            ..NetworkParams::new(num_inputs, num_dendrites, num_outputs, family).seed(seed)
        };
        Ok(PyNetwork {
            inner: SkimNetwork::new(params).map_err(py_err)?,
        })
    }

    /// Solves the output weights. `targets[i]` is an `N x K_i` list of rows
    /// for `inputs[i]`. With `calibrate`, the threshold is reset to the
    /// midpoint of the trained soma over target and silent steps.
    #[pyo3(signature = (inputs, targets, solver = "batch", regularization = 1e-8, calibrate = true))]
    fn fit(
        &mut self,
        inputs: Vec<PyRef<'_, PySpikeRaster>>,
        targets: Vec<Vec<Vec<f64>>>,
        solver: &str,
        regularization: f64,
        calibrate: bool,
    ) -> PyResult<()> {
        let data = training_set(inputs, targets)?;
        let solver: SolverKind = solver.parse().map_err(py_err)?;
        let opts = SolveOptions {
            solver,
            regularization,
            tolerance: None,
        };
        if calibrate {
            fit_calibrated(&mut self.inner, &data, &opts).map_err(py_err)?;
        } else {
            fit(&mut self.inner, &data, &opts).map_err(py_err)?;
        }
        Ok(())
    }

    /// Returns `(activations, soma, spike_times)`; the last two are `None`
    /// for an untrained network.
    #[allow(clippy::type_complexity)]
    fn forward(
        &self,
        raster: &PySpikeRaster,
    ) -> PyResult<(
        Vec<Vec<f64>>,
        Option<Vec<Vec<f64>>>,
        Option<Vec<Vec<usize>>>,
    )> {
        let trace = self.inner.forward(&raster.inner).map_err(py_err)?;
        let soma = trace.soma.as_ref().map(from_matrix);
        let spikes = match trace.output_spikes {
            Some(_) => Some(
                (0..self.inner.num_outputs())
                    .map(|n| trace.spike_times(n))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(py_err)?,
            ),
            None => None,
        };
        Ok((from_matrix(trace.activations.values()), soma, spikes))
    }

    /// Keeps the `keep` dendrites with the largest output weights and
    /// re-solves. Returns the pruned network and the report as a dict.
    #[pyo3(signature = (inputs, targets, keep, calibrate = true))]
    fn prune_two_pass<'py>(
        &self,
        py: Python<'py>,
        inputs: Vec<PyRef<'_, PySpikeRaster>>,
        targets: Vec<Vec<Vec<f64>>>,
        keep: usize,
        calibrate: bool,
    ) -> PyResult<(PyNetwork, Bound<'py, PyAny>)> {
        let data = training_set(inputs, targets)?;
        let (mut pruned, report) =
            core_prune(&self.inner, &data, keep, &SolveOptions::default()).map_err(py_err)?;
        if calibrate {
            recalibrate(&mut pruned, &data, ThresholdRule::Calibrated).map_err(py_err)?;
        }
        let report = json_to_py(py, json_bytes(&report).map_err(py_err)?)?;
        Ok((PyNetwork { inner: pruned }, report))
    }

    #[getter]
    fn num_inputs(&self) -> usize {
        self.inner.num_inputs()
    }

    #[getter]
    fn num_dendrites(&self) -> usize {
        self.inner.num_dendrites()
    }

    #[getter]
    fn num_outputs(&self) -> usize {
        self.inner.num_outputs()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold()
    }

    #[setter]
    fn set_threshold(&mut self, theta: f64) -> PyResult<()> {
        self.inner.set_threshold(theta).map_err(py_err)
    }

    #[getter]
    fn input_weights(&self) -> Vec<Vec<f64>> {
        from_matrix(self.inner.input_weights())
    }

    #[getter]
    fn output_weights(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.output_weights().map(from_matrix)
    }

    fn to_json(&self) -> PyResult<String> {
        network_to_json(&self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: network_from_json(text).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_network(&self.inner, &path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: load_network(&path).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(num_inputs={}, num_dendrites={}, num_outputs={}, trained={})",
            self.inner.num_inputs(),
            self.inner.num_dendrites(),
            self.inner.num_outputs(),
            self.inner.output_weights().is_some()
        )
    }
}

/// Kernel response `dt` steps after a unit trigger.
#[pyfunction]
#[pyo3(signature = (kind, dt, tau = 0.0, delta_t = 0.0, sigma = 0.0, omega = 0.0))]
fn eval_response(
    kind: &str,
    dt: f64,
    tau: f64,
    delta_t: f64,
    sigma: f64,
    omega: f64,
) -> PyResult<f64> {
    let kind: KernelKind = kind.parse().map_err(py_err)?;
    let spec = KernelSpec {
        kind,
        tau,
        delta_t,
        sigma,
        omega,
        ..KernelSpec::alpha(1.0)
    };
    core_eval(&spec, dt).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, tol = None))]
fn pseudoinverse(a: Vec<Vec<f64>>, tol: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_matrix(
        &core_pinv(&to_matrix(a)?, tol).map_err(py_err)?,
    ))
}

/// Least-squares `W` minimizing `||W A - Y||`.
#[pyfunction]
#[pyo3(signature = (a, y, tol = None))]
fn solve_batch(a: Vec<Vec<f64>>, y: Vec<Vec<f64>>, tol: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_matrix(
        &core_solve(&to_matrix(a)?, &to_matrix(y)?, tol).map_err(py_err)?,
    ))
}

#[pyfunction]
fn solve_ridge(a: Vec<Vec<f64>>, y: Vec<Vec<f64>>, lam: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_matrix(
        &core_ridge(&to_matrix(a)?, &to_matrix(y)?, lam).map_err(py_err)?,
    ))
}

/// `FN/TP + FP/TN` and whether a zero denominator was hit.
#[pyfunction]
fn wills_error(
    true_positives: usize,
    false_positives: usize,
    false_negatives: usize,
    true_negatives: usize,
) -> (f64, bool) {
    let s = core_wills(&ConfusionCounts {
        true_positives,
        false_positives,
        false_negatives,
        true_negatives,
    });
    (s.value, s.degenerate)
}

/// A fixed pattern hidden in Poisson noise. Returns the raster, the target
/// rows and the target windows `(start, end)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, stream_len = 40_000, num_embeddings = 100))]
#[allow(clippy::type_complexity)]
fn gen_embedded_task(
    seed: u64,
    stream_len: usize,
    num_embeddings: usize,
) -> PyResult<(PySpikeRaster, Vec<Vec<f64>>, Vec<(usize, usize)>)> {
    let params = EmbeddedTaskParams {
        seed,
        stream_len,
        num_embeddings,
        ..Default::default()
    };
    let (raster, target, task) = core_gen_task(&params).map_err(py_err)?;
    Ok((
        PySpikeRaster { inner: raster },
        from_matrix(target.values()),
        task.target_windows(),
    ))
}

/// Trains on a generated stream, scores a fresh one, and returns the metrics.
#[pyfunction]
#[pyo3(signature = (seed = 0, num_dendrites = 80, stream_len = 40_000, num_embeddings = 100, test_stream_len = 30_000, test_embeddings = 60))]
fn run_pattern_task<'py>(
    py: Python<'py>,
    seed: u64,
    num_dendrites: usize,
    stream_len: usize,
    num_embeddings: usize,
    test_stream_len: usize,
    test_embeddings: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = PatternTaskConfig::standard(seed);
    cfg.network.num_dendrites = num_dendrites;
    cfg.task.stream_len = stream_len;
    cfg.task.num_embeddings = num_embeddings;
    cfg.test_stream_len = test_stream_len;
    cfg.test_embeddings = test_embeddings;
    let run = py.detach(|| core_run(&cfg)).map_err(py_err)?;
    json_to_py(
        py,
        json_bytes(&run.metrics().map_err(py_err)?).map_err(py_err)?,
    )
}

#[pymodule]
fn skim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySpikeRaster>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(eval_response, m)?)?;
    m.add_function(wrap_pyfunction!(pseudoinverse, m)?)?;
    m.add_function(wrap_pyfunction!(solve_batch, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(wills_error, m)?)?;
    m.add_function(wrap_pyfunction!(gen_embedded_task, m)?)?;
    m.add_function(wrap_pyfunction!(run_pattern_task, m)?)?;
    Ok(())
}
