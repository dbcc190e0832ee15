//! Python bindings: `import thermodelay`.

use num_complex::Complex64;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use engine::coercivity::{self, Branch};
use engine::generator::{self as gen, GeneratorMatrix};
use engine::spectral;
use engine::timestepper::{self as ts, Scheme, SimulationOptions, Trajectory};
use engine::{ComplexFrequency, Error, GridSpec, StateVector, ThetaBc};

fn to_py(e: Error) -> PyErr {
    match &e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

#[pyclass(name = "PhysicalParams", module = "thermodelay", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyParams(coercivity::PhysicalParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (alpha, beta, gamma, kappa, tau, ell))]
    fn new(alpha: f64, beta: f64, gamma: f64, kappa: f64, tau: f64, ell: f64) -> PyResult<Self> {
        coercivity::PhysicalParams::new(alpha, beta, gamma, kappa, tau, ell)
            .map(Self)
            .map_err(to_py)
    }

    /// α = β = κ = 1, γ = 0.5, τ = 0.5, ℓ = π.
    #[staticmethod]
    fn reference() -> Self {
        Self(coercivity::PhysicalParams::reference())
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }
    #[getter]
    fn kappa(&self) -> f64 {
        self.0.kappa
    }
    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau
    }
    #[getter]
    fn ell(&self) -> f64 {
        self.0.ell
    }
    #[getter]
    fn xi(&self) -> f64 {
        self.0.xi()
    }
    #[getter]
    fn m(&self) -> f64 {
        self.0.m()
    }

    /// `ατ ≤ β`
    fn stability_condition(&self) -> bool {
        coercivity::stability_condition(&self.0)
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "PhysicalParams(alpha={}, beta={}, gamma={}, kappa={}, tau={}, ell={})",
            p.alpha, p.beta, p.gamma, p.kappa, p.tau, p.ell
        )
    }
}

/// Assembled discrete generator on an `n_cells × n_rho` grid.
#[pyclass(name = "Generator", module = "thermodelay", frozen)]
struct PyGenerator(GeneratorMatrix);

impl PyGenerator {
    fn state(&self, data: Vec<Complex64>) -> PyResult<StateVector> {
        StateVector::from_vec(self.0.layout(), data).map_err(to_py)
    }
}

#[pymethods]
impl PyGenerator {
    #[new]
    #[pyo3(signature = (params, n_cells=64, n_rho=32, theta_bc="neumann"))]
    fn new(params: PyParams, n_cells: usize, n_rho: usize, theta_bc: &str) -> PyResult<Self> {
        let g = GridSpec::new(n_cells, n_rho, params.0.ell).map_err(to_py)?;
        gen::assemble(&params.0, &g, parse::<ThetaBc>(theta_bc)?)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    /// Offsets of the `u`, `v`, `z` and `θ` blocks in a state vector.
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let l = self.0.layout();
        (l.u(), l.v(), l.z(), l.theta())
    }

    fn apply(&self, state: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        let u = self.state(state)?;
        self.0.apply(&u).map(StateVector::into_vec).map_err(to_py)
    }

    fn eigenvalues(&self) -> PyResult<Vec<Complex64>> {
        spectral::eigenvalues(&self.0).map_err(to_py)
    }

    /// Spectral abscissa, optionally with the conserved zero mode removed.
    #[pyo3(signature = (deflate=true))]
    fn abscissa(&self, deflate: bool) -> PyResult<f64> {
        spectral::spectrum(&self.0, deflate).map(|r| r.abscissa).map_err(to_py)
    }

    /// `(euclidean, energy)` norms of `(λ − A)⁻¹` at `λ = a + ib`.
    fn resolvent_norm(&self, a: f64, b: f64) -> PyResult<(f64, f64)> {
        spectral::resolvent_norm(&self.0, ComplexFrequency::new(a, b))
            .map(|n| (n.euclid, n.weighted))
            .map_err(to_py)
    }

    /// Solves `(λ − A)U = F`.
    #[pyo3(signature = (a, b, rhs, reduced=false))]
    fn resolvent_solve(&self, a: f64, b: f64, rhs: Vec<Complex64>, reduced: bool) -> PyResult<Vec<Complex64>> {
        let f = self.state(rhs)?;
        let lam = ComplexFrequency::new(a, b);
        let out = if reduced {
            gen::resolvent_solve_reduced(&self.0, lam, &f)
        } else {
            gen::resolvent_solve(&self.0, lam, &f)
        };
        out.map(StateVector::into_vec).map_err(to_py)
    }

    fn energy(&self, state: Vec<Complex64>) -> PyResult<f64> {
        ts::energy(&self.state(state)?, self.0.params(), self.0.grid()).map_err(to_py)
    }

    fn dissipation_residual(&self, state: Vec<Complex64>) -> PyResult<f64> {
        ts::dissipation_residual(&self.0, &self.state(state)?).map_err(to_py)
    }

    /// Initial state for a preset such as `sine_mode:1` or `random_smooth:7`.
    #[pyo3(signature = (preset="sine_mode:1"))]
    fn initial_state(&self, preset: &str) -> PyResult<Vec<Complex64>> {
        let init = preset_data(preset)?;
        init.state(self.0.grid()).map(StateVector::into_vec).map_err(to_py)
    }

    /// One implicit Euler or trapezoidal step.
    #[pyo3(signature = (state, dt, scheme="implicit_euler"))]
    fn step(&self, state: Vec<Complex64>, dt: f64, scheme: &str) -> PyResult<Vec<Complex64>> {
        ts::step(&self.0, &self.state(state)?, dt, parse::<Scheme>(scheme)?)
            .map(StateVector::into_vec)
            .map_err(to_py)
    }
}

fn preset_data(preset: &str) -> PyResult<ts::InitialData> {
    engine::cli::parse_preset(preset, None).map_err(PyValueError::new_err)
}

#[pyfunction]
fn coercivity_value(params: PyParams, a: f64, b: f64) -> f64 {
    coercivity::coercivity_value(ComplexFrequency::new(a, b), &params.0)
}

/// `(bound, branch)` with branch `"large"` or `"small"`.
#[pyfunction]
fn coercivity_lower_bound(params: PyParams, a: f64, b: f64) -> PyResult<(f64, &'static str)> {
    let (bound, branch) = coercivity::coercivity_lower_bound(ComplexFrequency::new(a, b), &params.0).map_err(to_py)?;
    Ok((
        bound,
        if branch == Branch::LargeLambda {
            "large"
        } else {
            "small"
        },
    ))
}

#[pyfunction]
fn coercivity_scan<'py>(
    py: Python<'py>,
    params: PyParams,
    a_range: (f64, f64),
    b_range: (f64, f64),
    n_a: usize,
    n_b: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let r = coercivity::coercivity_scan(&params.0, a_range, b_range, n_a, n_b).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("min_value", r.min_value)?;
    d.set_item("argmin", (r.argmin.a, r.argmin.b))?;
    d.set_item("samples", r.samples)?;
    d.set_item("nonpositive", r.nonpositive.len())?;
    Ok(d)
}

/// Returns `(times, energies)`.
#[pyfunction]
#[pyo3(signature = (params, n_cells=64, n_rho=32, preset="sine_mode:1", t_final=20.0, dt=1e-3,
                    scheme="implicit_euler", sample_stride=10, theta_bc="neumann", formulation="transport"))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    params: PyParams,
    n_cells: usize,
    n_rho: usize,
    preset: &str,
    t_final: f64,
    dt: f64,
    scheme: &str,
    sample_stride: usize,
    theta_bc: &str,
    formulation: &str,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let g = GridSpec::new(n_cells, n_rho, params.0.ell).map_err(to_py)?;
    let init = preset_data(preset)?;
    let bc = parse::<ThetaBc>(theta_bc)?;
    let mut opts = SimulationOptions::new(t_final, dt, parse::<Scheme>(scheme)?);
    opts.sample_stride = sample_stride;
    let p = params.0;
    let traj = py
        .detach(|| match formulation {
            "transport" => Ok(ts::simulate(&p, &g, bc, &init, &opts)),
            "history" => Ok(ts::simulate_history(&p, &g, bc, &init, &opts)),
            other => Err(format!("unknown formulation `{other}`")),
        })
        .map_err(PyValueError::new_err)?
        .map_err(to_py)?;
    Ok((traj.times, traj.energies))
}

/// Fits `‖U(t)‖ ≈ C e^{−wt}` to sampled energies.
#[pyfunction]
#[pyo3(signature = (times, energies, t_start=None))]
fn fit_decay<'py>(
    py: Python<'py>,
    times: Vec<f64>,
    energies: Vec<f64>,
    t_start: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let traj = Trajectory {
        times,
        energies,
        states: Vec::new(),
    };
    let fit = ts::fit_decay_from(&traj, t_start).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("c_fit", fit.c_fit)?;
    d.set_item("w_fit", fit.w_fit)?;
    d.set_item("r_squared", fit.r_squared)?;
    d.set_item("window", fit.window)?;
    d.set_item("samples", fit.samples)?;
    Ok(d)
}

#[pymodule]
fn thermodelay(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(coercivity_value, m)?)?;
    m.add_function(wrap_pyfunction!(coercivity_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(coercivity_scan, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    Ok(())
}
