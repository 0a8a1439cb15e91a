//! Python bindings: finite-max problems, the grey-box oracle and both
//! solver entry points, with run reports returned as plain dictionaries.

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dfovu::driver::RRule;
use dfovu::greybox::{generate_random, make_maxquad};
use dfovu::{
    baseline_bundle_solve, dfo_vu_solve, Oracle, ProblemSpec, RunReport, SolverConfig,
    SolverError, Termination,
};

fn to_py_err(e: SolverError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A convex (or nonconvex) finite-max problem `f(x) = max_j q_j(x)` over
/// quadratic subfunctions.
#[pyclass(name = "Problem")]
struct PyProblem {
    spec: ProblemSpec,
}

#[pymethods]
impl PyProblem {
    /// The classical 10-dimensional max-of-five-quadratics test problem.
    #[staticmethod]
    fn maxquad() -> Self {
        PyProblem {
            spec: make_maxquad(),
        }
    }

    /// Random instance with a prescribed V-dimension at the minimizer.
    #[staticmethod]
    #[pyo3(signature = (n, dim_v, seed, convex=true))]
    fn random(n: usize, dim_v: usize, seed: u64, convex: bool) -> PyResult<Self> {
        Ok(PyProblem {
            spec: generate_random(n, dim_v, seed, convex).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyProblem {
            spec: ProblemSpec::from_json(s).map_err(to_py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.spec.to_json().map_err(to_py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.spec.n
    }

    #[getter]
    fn m(&self) -> usize {
        self.spec.m
    }

    #[getter]
    fn convex(&self) -> bool {
        self.spec.convex
    }

    #[getter]
    fn known_dim_v(&self) -> Option<usize> {
        self.spec.known_dim_v
    }

    #[getter]
    fn known_opt_value(&self) -> Option<f64> {
        self.spec.known_opt_value
    }

    /// Function value `max_j q_j(x)`.
    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&x)?;
        Ok(self.spec.value(&DVector::from_vec(x)))
    }

    /// Grey-box evaluation: `(subfunction values, fmax, almost-active indices)`.
    fn evaluate(&self, x: Vec<f64>) -> PyResult<(Vec<f64>, f64, Vec<usize>)> {
        self.check_dim(&x)?;
        let oracle = Oracle::new(&self.spec);
        let rec = oracle
            .evaluate_uncounted(&DVector::from_vec(x))
            .map_err(to_py_err)?;
        Ok((rec.values.iter().copied().collect(), rec.fmax, rec.active))
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(n={}, m={}, convex={})",
            self.spec.n, self.spec.m, self.spec.convex
        )
    }
}

impl PyProblem {
    fn check_dim(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.spec.n {
            return Err(PyValueError::new_err(format!(
                "expected a point of dimension {}, got {}",
                self.spec.n,
                x.len()
            )));
        }
        Ok(())
    }
}

fn termination_str(t: Termination) -> &'static str {
    match t {
        Termination::Stopped => "stopped",
        Termination::EpsGuard => "eps_guard",
        Termination::Budget => "budget",
        Termination::QpFailure => "qp_failure",
    }
}

fn report_dict(py: Python<'_>, rep: &RunReport) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("x_final", rep.x_final.clone())?;
    d.set_item("f_final", rep.f_final)?;
    d.set_item("s_final_norm", rep.s_final_norm)?;
    d.set_item("eps_final", rep.eps_final)?;
    d.set_item("outer_iters", rep.outer_iters)?;
    d.set_item("serious_steps", rep.serious_steps)?;
    d.set_item("null_steps", rep.null_steps)?;
    d.set_item("u_steps", rep.u_steps)?;
    d.set_item("calls", rep.calls)?;
    d.set_item("wall_time", rep.wall_time)?;
    d.set_item("termination", termination_str(rep.termination))?;
    d.set_item("ra", rep.ra)?;
    d.set_item("v_found", rep.v_found)?;
    Ok(d.into())
}

/// Run a solver on a problem from a start point.  `solver` is `"dfovu"`
/// (V-steps alternating with U-Newton steps) or `"baseline"` (bundle only).
/// Unset keyword arguments keep the benchmark defaults; `r_fixed` switches
/// the proximal parameter from the dynamic rule to the given constant.
#[pyfunction]
#[pyo3(signature = (problem, x0, solver="dfovu", max_calls=None, delta=None,
    eps_min=None, eps0=None, eps_factor=None, m_descent=None, r_fixed=None,
    seed=None))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    problem: &PyProblem,
    x0: Vec<f64>,
    solver: &str,
    max_calls: Option<u64>,
    delta: Option<f64>,
    eps_min: Option<f64>,
    eps0: Option<f64>,
    eps_factor: Option<f64>,
    m_descent: Option<f64>,
    r_fixed: Option<f64>,
    seed: Option<u64>,
) -> PyResult<Py<PyDict>> {
    problem.check_dim(&x0)?;
    let mut cfg = SolverConfig::defaults_for(problem.spec.n);
    if let Some(v) = max_calls {
        cfg.max_calls = v;
    }
    if let Some(v) = delta {
        cfg.delta = v;
    }
    if let Some(v) = eps_min {
        cfg.eps_min = v;
    }
    if let Some(v) = eps0 {
        cfg.eps0 = v;
    }
    if let Some(v) = eps_factor {
        cfg.eps_factor = v;
    }
    if let Some(v) = m_descent {
        cfg.m_descent = v;
    }
    if let Some(v) = r_fixed {
        cfg.r0 = v;
        cfg.r_rule = RRule::Fixed;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    let oracle = Oracle::new(&problem.spec);
    let x0 = DVector::from_vec(x0);
    let rep = match solver {
        "dfovu" => dfo_vu_solve(&oracle, &x0, &cfg),
        "baseline" => baseline_bundle_solve(&oracle, &x0, &cfg),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown solver {other:?}; expected \"dfovu\" or \"baseline\""
            )))
        }
    }
    .map_err(to_py_err)?;
    report_dict(py, &rep)
}

/// Digits of accuracy of `f_found` against the reference value `f_bar`.
#[pyfunction]
fn compute_ra(f_found: f64, f_bar: f64) -> f64 {
    dfovu::bench::compute_ra(f_found, f_bar)
}

#[pymodule]
fn dfovu_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(compute_ra, m)?)?;
    Ok(())
}
