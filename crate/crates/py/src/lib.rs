//! Python bindings: the solver, POD, networks, trained models and the
//! pipeline steps.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nbf_core::autodiff::{Activation, MlpNetwork};
use nbf_core::config::PipelineConfig;
use nbf_core::deeponet::DeepOnetModel;
use nbf_core::euler::{self, GasConstants, PrimitiveState};
use nbf_core::field::{StateField, Variable};
use nbf_core::fv::{self, GridSpec, SolverConfig, StructuredGrid};
use nbf_core::nbf::NbfModel;
use nbf_core::pipeline::Pipeline;
use nbf_core::{eval, pod, Error};

fn py_err(e: Error) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn states_out(states: &[PrimitiveState]) -> Vec<[f64; 4]> {
    states.iter().map(|w| w.to_array()).collect()
}

fn states_in(states: &[[f64; 4]]) -> Vec<PrimitiveState> {
    states
        .iter()
        .map(|&w| PrimitiveState::from_array(w))
        .collect()
}

/// Freestream primitive state `[rho, u, v, E]` at `mach`.
#[pyfunction]
fn freestream_state(mach: f64) -> PyResult<[f64; 4]> {
    euler::PdeParameter::new(mach).map_err(py_err)?;
    Ok(euler::freestream_state(mach, &GasConstants::default()).to_array())
}

/// Rusanov flux through a face with unit normal `normal`.
#[pyfunction]
fn rusanov_flux(left: [f64; 4], right: [f64; 4], normal: [f64; 2]) -> PyResult<[f64; 4]> {
    let gas = GasConstants::default();
    fv::rusanov_flux(
        &PrimitiveState::from_array(left),
        &PrimitiveState::from_array(right),
        normal,
        &gas,
    )
    .map_err(py_err)
}

#[pyfunction]
fn relative_l2(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    eval::relative_l2(&pred, &truth).map_err(py_err)
}

#[pyclass(name = "Grid", frozen)]
struct PyGrid {
    grid: StructuredGrid,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (nr=64, ntheta=64, r_outer=4.0))]
    fn new(nr: usize, ntheta: usize, r_outer: f64) -> PyResult<Self> {
        let grid = StructuredGrid::build(GridSpec {
            nr,
            ntheta,
            r_outer,
        })
        .map_err(py_err)?;
        Ok(Self { grid })
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.grid.num_cells()
    }

    fn centroids(&self) -> Vec<[f64; 2]> {
        self.grid.centroids().to_vec()
    }

    fn volumes(&self) -> Vec<f64> {
        self.grid.volumes().to_vec()
    }

    /// Cell indices along the stagnation line, wall first.
    fn stagnation_line(&self) -> Vec<usize> {
        self.grid.stagnation_line()
    }

    /// Steady solve from `initial` (freestream when omitted). Returns
    /// `(states, residuals, converged_at)`.
    #[pyo3(signature = (mach, initial=None, max_iters=None))]
    fn solve(
        &self,
        py: Python<'_>,
        mach: f64,
        initial: Option<Vec<[f64; 4]>>,
        max_iters: Option<usize>,
    ) -> PyResult<(Vec<[f64; 4]>, Vec<f64>, Option<usize>)> {
        let gas = GasConstants::default();
        let mut cfg = SolverConfig::default();
        if let Some(m) = max_iters {
            cfg.max_iters = m;
        }
        let init = match initial {
            Some(s) => states_in(&s),
            None => fv::freestream_field(&self.grid, mach, &gas),
        };
        let sol = py
            .detach(|| fv::solve_steady(&init, &self.grid, &cfg, mach, &gas))
            .map_err(|f| PyRuntimeError::new_err(f.to_string()))?;
        Ok((
            states_out(&sol.field.states),
            sol.history.residuals,
            sol.history.converged_at,
        ))
    }
}

/// Reads a SNAP file into `(mach, points, states)`.
#[pyfunction]
fn read_snapshot(path: PathBuf) -> PyResult<(f64, Vec<[f64; 2]>, Vec<[f64; 4]>)> {
    let f = StateField::read_snap(&path).map_err(py_err)?;
    Ok((f.mach, f.points.clone(), states_out(&f.states)))
}

/// POD of a snapshot matrix given as a list of columns. Returns a dict with
/// `mean`, `sigma` and `modes` (list of `n_bf` mode vectors).
#[pyfunction]
fn pod_basis<'py>(
    py: Python<'py>,
    columns: Vec<Vec<f64>>,
    n_bf: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let d = columns.len();
    let n = columns.first().map_or(0, |c| c.len());
    if d == 0 || columns.iter().any(|c| c.len() != n) {
        return Err(PyValueError::new_err(
            "columns must be non-empty and of equal length",
        ));
    }
    let w = Array2::from_shape_fn((n, d), |(r, c)| columns[c][r]);
    let b = pod::compute_pod_matrix(Variable::Rho, &w, n_bf).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("mean", b.mean.to_vec())?;
    out.set_item("sigma", b.sigma.to_vec())?;
    let modes: Vec<Vec<f64>> = b.modes.columns().into_iter().map(|c| c.to_vec()).collect();
    out.set_item("modes", modes)?;
    out.set_item("bound", b.truncation_error_bound(n_bf).map_err(py_err)?)?;
    Ok(out)
}

#[pyclass(name = "Mlp")]
struct PyMlp {
    net: MlpNetwork,
}

#[pymethods]
impl PyMlp {
    /// `activation` is `"leaky_relu"` or `"tanh"`.
    #[new]
    #[pyo3(signature = (layer_sizes, activation="leaky_relu", seed=0))]
    fn new(layer_sizes: Vec<usize>, activation: &str, seed: u64) -> PyResult<Self> {
        let act = match activation {
            "leaky_relu" => Activation::LeakyRelu(nbf_core::autodiff::DEFAULT_LEAKY_SLOPE),
            "tanh" => Activation::Tanh,
            other => return Err(PyValueError::new_err(format!("unknown activation {other}"))),
        };
        Ok(Self {
            net: MlpNetwork::new(&layer_sizes, act, seed).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.net.forward(&x).map_err(py_err)
    }

    /// Rows are outputs, columns inputs.
    fn input_jacobian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let j = self.net.input_jacobian(&x).map_err(py_err)?;
        Ok(j.rows().into_iter().map(|r| r.to_vec()).collect())
    }
}

#[pyclass(name = "NbfModel", frozen)]
struct PyNbf {
    model: NbfModel,
}

#[pymethods]
impl PyNbf {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: NbfModel::read_bundle(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_bf(&self) -> usize {
        self.model.n_bf
    }

    #[getter]
    fn train_machs(&self) -> Vec<f64> {
        self.model.train_machs.clone()
    }

    /// Predicted `[rho, u, v, E]` at each point.
    fn predict(&self, points: Vec<[f64; 2]>, mach: f64) -> PyResult<Vec<[f64; 4]>> {
        let p = self.model.predict(&points, mach).map_err(py_err)?;
        Ok(states_out(&p.field.states))
    }
}

#[pyclass(name = "DeepOnetModel", frozen)]
struct PyDeepOnet {
    model: DeepOnetModel,
}

#[pymethods]
impl PyDeepOnet {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: DeepOnetModel::read_bundle(&path).map_err(py_err)?,
        })
    }

    fn predict(&self, points: Vec<[f64; 2]>, mach: f64) -> PyResult<Vec<[f64; 4]>> {
        let f = self.model.predict(&points, mach).map_err(py_err)?;
        Ok(states_out(&f.states))
    }
}

/// Runs one pipeline step (`"generate-data"`, `"pod"`, ..., `"pipeline"`)
/// and returns its summary as a dict.
#[pyfunction]
#[pyo3(signature = (step, config=None, out_dir=None, seed=None, force=false, jobs=1))]
fn run_step<'py>(
    py: Python<'py>,
    step: &str,
    config: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    force: bool,
    jobs: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(&p).map_err(py_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = out_dir {
        cfg.out_dir = d;
    }
    let seed = seed.unwrap_or(cfg.seed);
    let pipeline = Pipeline::new(cfg.with_seed(seed), force, jobs).map_err(py_err)?;
    let f = match step {
        "generate-data" => Pipeline::generate_data,
        "pod" => Pipeline::pod,
        "train-basis" => Pipeline::train_basis,
        "train-unknowns" => Pipeline::train_unknowns,
        "train-deeponet" => Pipeline::train_deeponet,
        "evaluate" => Pipeline::evaluate,
        "ablation" => Pipeline::ablation,
        "accelerate" => Pipeline::accelerate,
        "pipeline" => Pipeline::run_all,
        other => return Err(PyValueError::new_err(format!("unknown step {other}"))),
    };
    let summary = py.detach(|| f(&pipeline)).map_err(py_err)?;
    let out = PyDict::new(py);
    for (k, v) in summary.pairs {
        out.set_item(k, v)?;
    }
    Ok(out)
}

#[pymodule]
fn nbf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(freestream_state, m)?)?;
    m.add_function(wrap_pyfunction!(rusanov_flux, m)?)?;
    m.add_function(wrap_pyfunction!(relative_l2, m)?)?;
    m.add_function(wrap_pyfunction!(read_snapshot, m)?)?;
    m.add_function(wrap_pyfunction!(pod_basis, m)?)?;
    m.add_function(wrap_pyfunction!(run_step, m)?)?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyMlp>()?;
    m.add_class::<PyNbf>()?;
    m.add_class::<PyDeepOnet>()?;
    Ok(())
}
