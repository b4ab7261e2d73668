//! Python bindings for the quantile distributional RL toolkit.
//!
//! The module mirrors the core API at the granularity a notebook wants:
//! build a model, solve or run it, measure distances. Reward models are
//! given per state as a float (point mass), a list of `(value, prob)`
//! pairs, or a `("gaussian", mean, std)` / `("uniform", lo, hi)` tuple.
//! Interpolation parameters are a scalar applied everywhere or a full
//! per-state nested list.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qtd_core::{Error, FiniteDistribution, InterpolationParams, RewardModel, StateSource};

fn pyerr(e: Error) -> PyErr {
    match e {
        Error::NonConvergence { .. } | Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_reward(obj: &Bound<'_, PyAny>) -> PyResult<RewardModel> {
    if let Ok(v) = obj.extract::<f64>() {
        return RewardModel::dirac(v).map_err(pyerr);
    }
    if let Ok((kind, a, b)) = obj.extract::<(String, f64, f64)>() {
        return match kind.as_str() {
            "gaussian" => RewardModel::gaussian(a, b).map_err(pyerr),
            "uniform" => RewardModel::uniform(a, b).map_err(pyerr),
            other => Err(PyValueError::new_err(format!(
                "unknown reward kind {other:?}, expected \"gaussian\" or \"uniform\""
            ))),
        };
    }
    if let Ok(atoms) = obj.extract::<Vec<(f64, f64)>>() {
        return Ok(RewardModel::Finite(FiniteDistribution::new(atoms).map_err(pyerr)?));
    }
    Err(PyValueError::new_err(
        "reward must be a float, a list of (value, prob) pairs, or a (kind, a, b) tuple",
    ))
}

fn parse_lambda(
    obj: Option<&Bound<'_, PyAny>>,
    num_states: usize,
    m: usize,
) -> PyResult<InterpolationParams> {
    match obj {
        None => InterpolationParams::constant(num_states, m, 0.0).map_err(pyerr),
        Some(obj) => {
            if let Ok(v) = obj.extract::<f64>() {
                return InterpolationParams::constant(num_states, m, v).map_err(pyerr);
            }
            if let Ok(rows) = obj.extract::<Vec<Vec<f64>>>() {
                return InterpolationParams::new(rows).map_err(pyerr);
            }
            Err(PyValueError::new_err("lam must be a scalar or a nested per-state list"))
        }
    }
}

fn parse_schedule(obj: Option<&Bound<'_, PyAny>>) -> PyResult<qtd_core::StepSchedule> {
    match obj {
        None => Ok(qtd_core::StepSchedule::default_polynomial()),
        Some(obj) => {
            if let Ok((kind, c, rho)) = obj.extract::<(String, f64, f64)>() {
                if kind == "polynomial" {
                    return qtd_core::StepSchedule::polynomial(c, rho).map_err(pyerr);
                }
            }
            if let Ok((kind, alpha)) = obj.extract::<(String, f64)>() {
                if kind == "constant" {
                    return qtd_core::StepSchedule::constant(alpha).map_err(pyerr);
                }
            }
            Err(PyValueError::new_err(
                "schedule must be (\"polynomial\", c, rho) or (\"constant\", alpha)",
            ))
        }
    }
}

/// Markov reward process: transition matrix, per-state reward models,
/// discount, and optional terminal flags.
#[pyclass(name = "Mrp", frozen)]
struct PyMrp {
    inner: qtd_core::Mrp,
}

#[pymethods]
impl PyMrp {
    #[new]
    #[pyo3(signature = (transitions, rewards, gamma, terminal=None))]
    fn new(
        transitions: Vec<Vec<f64>>,
        rewards: Vec<Bound<'_, PyAny>>,
        gamma: f64,
        terminal: Option<Vec<bool>>,
    ) -> PyResult<Self> {
        let n = transitions.len();
        let rewards: Vec<RewardModel> =
            rewards.iter().map(parse_reward).collect::<PyResult<_>>()?;
        let terminal = terminal.unwrap_or_else(|| vec![false; n]);
        let inner = qtd_core::Mrp::new(transitions, rewards, gamma, terminal).map_err(pyerr)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    /// Expected discounted return per state (the classical value
    /// function), solved exactly from the linear system.
    fn value_function(&self) -> PyResult<Vec<f64>> {
        self.inner.value_function().map_err(pyerr)
    }

    /// (min, max) attainable return, or None for unbounded rewards.
    fn return_bounds(&self) -> Option<(f64, f64)> {
        self.inner.return_bounds()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mrp(states={}, gamma={})",
            self.inner.num_states(),
            self.inner.gamma()
        )
    }
}

/// Per-state quantile locations: a states × m table.
#[pyclass(name = "QuantileTable", from_py_object)]
#[derive(Clone)]
struct PyQuantileTable {
    inner: qtd_core::QuantileTable,
}

#[pymethods]
impl PyQuantileTable {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: qtd_core::QuantileTable::new(rows).map_err(pyerr)? })
    }

    #[staticmethod]
    fn zeros(num_states: usize, m: usize) -> PyResult<Self> {
        Ok(Self { inner: qtd_core::QuantileTable::zeros(num_states, m).map_err(pyerr)? })
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows().to_vec()
    }

    fn get(&self, x: usize, i: usize) -> f64 {
        self.inner.get(x, i)
    }

    /// Largest coordinate-wise gap to another table of the same shape.
    fn sup_distance(&self, other: &PyQuantileTable) -> f64 {
        self.inner.sup_distance(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!("QuantileTable({:?})", self.inner.rows())
    }
}

/// One stochastic run: the final table plus periodic snapshots.
#[pyclass(name = "RunRecord", frozen)]
struct PyRunRecord {
    inner: qtd_core::RunRecord,
}

#[pymethods]
impl PyRunRecord {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    #[getter]
    fn final_table(&self) -> PyQuantileTable {
        PyQuantileTable { inner: self.inner.final_table().clone() }
    }

    fn snapshots(&self) -> Vec<(usize, Vec<Vec<f64>>)> {
        self.inner
            .snapshots()
            .iter()
            .map(|(step, table)| (*step, table.rows().to_vec()))
            .collect()
    }
}

/// Quantile levels (2i−1)/(2m) for i = 1..m.
#[pyfunction]
fn tau_levels(m: usize) -> PyResult<Vec<f64>> {
    qtd_core::tau_levels(m).map_err(pyerr)
}

/// Project a finite distribution onto m interpolated quantile atoms.
#[pyfunction]
#[pyo3(signature = (atoms, m, lam=None))]
fn project(atoms: Vec<(f64, f64)>, m: usize, lam: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let dist = FiniteDistribution::new(atoms).map_err(pyerr)?;
    let lam = lam.unwrap_or_else(|| vec![0.0; m]);
    qtd_core::project(&dist, m, &lam).map_err(pyerr)
}

/// Wasserstein-1 distance between two finite distributions given as
/// (value, prob) atom lists.
#[pyfunction]
fn wasserstein1(a: Vec<(f64, f64)>, b: Vec<(f64, f64)>) -> PyResult<f64> {
    let da = FiniteDistribution::new(a).map_err(pyerr)?;
    let db = FiniteDistribution::new(b).map_err(pyerr)?;
    Ok(da.wasserstein1(&db))
}

/// Solve the projected fixed point by iterating the projected Bellman
/// operator until the sup-norm step drops below tol·(1−γ)/γ. Returns
/// (table, iterations).
#[pyfunction]
#[pyo3(signature = (mrp, m, lam=None, init=None, tol=1e-10, max_iters=100_000))]
fn qdp_solve(
    mrp: &PyMrp,
    m: usize,
    lam: Option<&Bound<'_, PyAny>>,
    init: Option<PyQuantileTable>,
    tol: f64,
    max_iters: usize,
) -> PyResult<(PyQuantileTable, usize)> {
    let n = mrp.inner.num_states();
    let lambda = parse_lambda(lam, n, m)?;
    let init = match init {
        Some(t) => t.inner,
        None => qtd_core::QuantileTable::zeros(n, m).map_err(pyerr)?,
    };
    let (table, iters) =
        qtd_core::qdp_solve(&mrp.inner, &lambda, &init, tol, max_iters).map_err(pyerr)?;
    Ok((PyQuantileTable { inner: table }, iters))
}

/// One projected Bellman step; dispatches on the reward models and uses
/// bisection at `bisect_tol` when any reward is continuous.
#[pyfunction]
#[pyo3(signature = (mrp, table, lam=None, bisect_tol=1e-8))]
fn qdp_step(
    mrp: &PyMrp,
    table: &PyQuantileTable,
    lam: Option<&Bound<'_, PyAny>>,
    bisect_tol: f64,
) -> PyResult<PyQuantileTable> {
    let discrete = (0..mrp.inner.num_states())
        .all(|x| matches!(mrp.inner.reward(x), RewardModel::Finite(_)));
    let inner = if discrete {
        let lambda = parse_lambda(lam, mrp.inner.num_states(), table.inner.m())?;
        qtd_core::qdp_step_discrete(&mrp.inner, &table.inner, &lambda).map_err(pyerr)?
    } else {
        if lam.is_some() {
            return Err(PyValueError::new_err(
                "continuous reward CDFs have unique quantiles; lam does not apply",
            ));
        }
        qtd_core::qdp_step_continuous(&mrp.inner, &table.inner, bisect_tol).map_err(pyerr)?
    };
    Ok(PyQuantileTable { inner })
}

/// Synchronous stochastic run: every state updates from its own sampled
/// transition at every step.
#[pyfunction]
#[pyo3(signature = (mrp, m, steps, seed, schedule=None, init=None, snapshot_every=0))]
fn run_synchronous(
    mrp: &PyMrp,
    m: usize,
    steps: usize,
    seed: u64,
    schedule: Option<&Bound<'_, PyAny>>,
    init: Option<PyQuantileTable>,
    snapshot_every: usize,
) -> PyResult<PyRunRecord> {
    let schedule = parse_schedule(schedule)?;
    let init = match init {
        Some(t) => t.inner,
        None => qtd_core::QuantileTable::zeros(mrp.inner.num_states(), m).map_err(pyerr)?,
    };
    let inner =
        qtd_core::run_synchronous(&mrp.inner, m, &schedule, steps, &init, seed, snapshot_every)
            .map_err(pyerr)?;
    Ok(PyRunRecord { inner })
}

/// Asynchronous stochastic run updating one state per step. `source` is
/// "trajectory" (the default) to follow the chain, or a list of iid
/// sampling weights.
#[pyfunction]
#[pyo3(signature = (mrp, m, steps, seed, source=None, schedule=None, init=None, snapshot_every=0))]
#[allow(clippy::too_many_arguments)]
fn run_asynchronous(
    mrp: &PyMrp,
    m: usize,
    steps: usize,
    seed: u64,
    source: Option<&Bound<'_, PyAny>>,
    schedule: Option<&Bound<'_, PyAny>>,
    init: Option<PyQuantileTable>,
    snapshot_every: usize,
) -> PyResult<PyRunRecord> {
    let source = match source {
        None => StateSource::Trajectory,
        Some(obj) => {
            if let Ok(name) = obj.extract::<String>() {
                if name != "trajectory" {
                    return Err(PyValueError::new_err(format!(
                        "unknown state source {name:?}, expected \"trajectory\" or a weight list"
                    )));
                }
                StateSource::Trajectory
            } else if let Ok(weights) = obj.extract::<Vec<f64>>() {
                StateSource::Iid(weights)
            } else {
                return Err(PyValueError::new_err(
                    "source must be \"trajectory\" or a weight list",
                ));
            }
        }
    };
    let schedule = parse_schedule(schedule)?;
    let init = match init {
        Some(t) => t.inner,
        None => qtd_core::QuantileTable::zeros(mrp.inner.num_states(), m).map_err(pyerr)?,
    };
    let inner = qtd_core::run_asynchronous(
        &mrp.inner, m, &schedule, steps, &init, seed, &source, snapshot_every,
    )
    .map_err(pyerr)?;
    Ok(PyRunRecord { inner })
}

/// Sup-norm distance from a table to the family of interpolated fixed
/// points, minimized over sampled and refined interpolation parameters.
#[pyfunction]
#[pyo3(signature = (mrp, table, lambda_samples=2000, seed=0))]
fn distance_to_fixed_point_set(
    mrp: &PyMrp,
    table: &PyQuantileTable,
    lambda_samples: usize,
    seed: u64,
) -> PyResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    qtd_core::distance_to_fixed_point_set(&mrp.inner, &table.inner, lambda_samples, &mut rng)
        .map_err(pyerr)
}

/// Measure the fixed point's Wasserstein-1 gap to Monte Carlo ground
/// truth and compare it against the closed-form bound. Returns a dict
/// with the measured distance, the bound, the sampling margin, and the
/// verdict.
#[pyfunction]
#[pyo3(signature = (mrp, m, lam=None, n_samples=1_000_000, deterministic_after_k=None, seed=0))]
fn check_w1_bound<'py>(
    py: Python<'py>,
    mrp: &PyMrp,
    m: usize,
    lam: Option<&Bound<'py, PyAny>>,
    n_samples: usize,
    deterministic_after_k: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let lambda = parse_lambda(lam, mrp.inner.num_states(), m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = qtd_core::check_w1_bound(
        &mrp.inner, m, &lambda, n_samples, deterministic_after_k, &mut rng,
    )
    .map_err(pyerr)?;
    let out = PyDict::new(py);
    out.set_item("measured_w1", report.measured_w1)?;
    out.set_item("bound", report.bound)?;
    out.set_item("mc_margin", report.mc_margin)?;
    out.set_item("holds", report.holds())?;
    out.set_item("m", report.m)?;
    out.set_item("gamma", report.gamma)?;
    out.set_item("v_min", report.v_min)?;
    out.set_item("v_max", report.v_max)?;
    Ok(out)
}

/// Integrate the expected-update dynamics with explicit Euler steps.
/// Returns [(t, rows), ...] including both endpoints.
#[pyfunction]
#[pyo3(signature = (mrp, init, dt=0.01, horizon=200.0))]
fn euler_integrate(
    mrp: &PyMrp,
    init: &PyQuantileTable,
    dt: f64,
    horizon: f64,
) -> PyResult<Vec<(f64, Vec<Vec<f64>>)>> {
    let path = qtd_core::euler_integrate(&mrp.inner, &init.inner, dt, horizon).map_err(pyerr)?;
    Ok(path
        .into_iter()
        .map(|(t, table)| (t, table.rows().to_vec()))
        .collect())
}

/// Atom-level back-up structure of a solved fixed point with
/// finite-support rewards: for each coordinate (x, i) a list of
/// (source_state, source_i, reward, weight) tuples. With the default
/// `tol=None` atoms must match coordinates bitwise, which suits exact
/// fixed points; pass a small tolerance for float-solved tables.
#[pyfunction]
#[pyo3(signature = (mrp, table, tol=None))]
fn backup_diagram(
    mrp: &PyMrp,
    table: &PyQuantileTable,
    tol: Option<f64>,
) -> PyResult<Vec<Vec<Vec<(usize, usize, f64, f64)>>>> {
    let diagram = match tol {
        None => qtd_core::backup_diagram(&mrp.inner, &table.inner).map_err(pyerr)?,
        Some(tol) => qtd_core::backup_diagram_with_tolerance(&mrp.inner, &table.inner, tol)
            .map_err(pyerr)?,
    };
    let n = diagram.num_states();
    let m = diagram.m();
    Ok((0..n)
        .map(|x| {
            (0..m)
                .map(|i| {
                    diagram
                        .edges(x, i)
                        .iter()
                        .map(|e| (e.source_state, e.source_i, e.reward, e.weight))
                        .collect()
                })
                .collect()
        })
        .collect())
}

#[pymodule]
fn qtd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMrp>()?;
    m.add_class::<PyQuantileTable>()?;
    m.add_class::<PyRunRecord>()?;
    m.add_function(wrap_pyfunction!(tau_levels, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_function(wrap_pyfunction!(qdp_solve, m)?)?;
    m.add_function(wrap_pyfunction!(qdp_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_synchronous, m)?)?;
    m.add_function(wrap_pyfunction!(run_asynchronous, m)?)?;
    m.add_function(wrap_pyfunction!(distance_to_fixed_point_set, m)?)?;
    m.add_function(wrap_pyfunction!(check_w1_bound, m)?)?;
    m.add_function(wrap_pyfunction!(euler_integrate, m)?)?;
    m.add_function(wrap_pyfunction!(backup_diagram, m)?)?;
    Ok(())
}
