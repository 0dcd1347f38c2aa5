//! Python bindings. Vectors are lists of floats, matrices lists of rows.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use modsde_core::cli::parse_observable;
use modsde_core::dynamics::{ou, ou_modified, OdeScheme, SdeScheme};
use modsde_core::estimator::{self, EstimatorKind};
use modsde_core::measure::{self, ErrorCurve, ErrorPoint, Reference, StabilityConfig, Verdict, WeakErrorMode};
use modsde_core::objective::{self, Objective};
use modsde_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Divergence { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_vector(x: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(x)
}

fn reference(name: &str) -> PyResult<Reference> {
    match name {
        "exact" => Ok(Reference::Exact),
        "modified" => Ok(Reference::Modified),
        _ => Err(PyValueError::new_err(format!("reference must be 'exact' or 'modified', got '{name}'"))),
    }
}

fn sde_scheme(name: &str) -> PyResult<SdeScheme> {
    match name {
        "em" | "euler-maruyama" => Ok(SdeScheme::EulerMaruyama),
        "implicit" | "implicit-euler" => Ok(SdeScheme::ImplicitEuler),
        _ => Err(PyValueError::new_err(format!("method must be 'em' or 'implicit', got '{name}'"))),
    }
}

fn curve_points(curve: &ErrorCurve) -> Vec<(f64, f64, f64)> {
    curve.points.iter().map(|p| (p.h, p.error, p.stderr)).collect()
}

/// `F(x) = ½xᵀAx + bᵀx` with `A` symmetric positive definite.
#[pyclass(name = "Quadratic", module = "modsde", frozen)]
struct PyQuadratic {
    inner: objective::Quadratic,
}

#[pymethods]
impl PyQuadratic {
    #[new]
    fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> PyResult<Self> {
        let inner = objective::Quadratic::new(to_matrix(a)?, to_vector(b)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (diag, b=None))]
    fn diagonal(diag: Vec<f64>, b: Option<Vec<f64>>) -> PyResult<Self> {
        let b = b.unwrap_or_else(|| vec![0.0; diag.len()]);
        let inner = objective::Quadratic::diagonal(&diag, &b).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.value(&to_vector(x)).map_err(py_err)
    }

    fn grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.grad(&to_vector(x)).map_err(py_err)?.as_slice().to_vec())
    }

    fn minimizer(&self) -> Vec<f64> {
        self.inner.minimizer().as_slice().to_vec()
    }

    /// `(L, mu, K)`
    fn constants(&self) -> (f64, f64, f64) {
        let c = self.inner.constants();
        (c.l, c.mu, c.k)
    }

    fn __repr__(&self) -> String {
        format!("Quadratic(dim={})", self.inner.dim())
    }
}

/// Closed-form covariance of single-coordinate descent at `x`.
#[pyfunction]
fn sigma_closed_form(q: &PyQuadratic, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let s = estimator::sigma_closed_form(&q.inner, &to_vector(x)).map_err(py_err)?;
    Ok(from_matrix(s.matrix()))
}

/// Covariance of the coordinate estimator with `block` coordinates, by
/// enumerating every outcome.
#[pyfunction]
#[pyo3(signature = (q, x, block=1, with_replacement=false))]
fn sigma_enumerated(q: &PyQuadratic, x: Vec<f64>, block: usize, with_replacement: bool) -> PyResult<Vec<Vec<f64>>> {
    let kind = EstimatorKind::Coordinate { block, with_replacement };
    let s = estimator::sigma_empirical(&kind, &q.inner, &to_vector(x)).map_err(py_err)?;
    Ok(from_matrix(s.matrix()))
}

/// Principal square root of a symmetric positive semidefinite matrix.
#[pyfunction]
fn matrix_sqrt(m: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let cov = estimator::CovarianceMatrix::new(to_matrix(m)?).map_err(py_err)?;
    Ok(from_matrix(&estimator::matrix_sqrt(&cov).map_err(py_err)?))
}

/// `(E X(t), E X(t)²)` of `dX = −γX dt + σ dW`.
#[pyfunction]
fn ou_moments(gamma: f64, sigma: f64, x0: f64, t: f64) -> PyResult<(f64, f64)> {
    let p = ou(gamma, sigma).map_err(py_err)?;
    Ok((p.mean(x0, t), p.second_moment(x0, t)))
}

/// `(γ̃, σ̃)` of the first modified equation of `method` at step `h`.
#[pyfunction]
fn ou_modified_parameters(method: &str, gamma: f64, sigma: f64, h: f64) -> PyResult<(f64, f64)> {
    let p = ou_modified(sde_scheme(method)?, gamma, sigma, h).map_err(py_err)?;
    Ok((p.gamma, p.sigma))
}

/// Least-squares order fit of `log error` against `log h`.
#[pyfunction]
fn fit_order<'py>(py: Python<'py>, h: Vec<f64>, error: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    if h.len() != error.len() {
        return Err(PyValueError::new_err("h and error have different lengths"));
    }
    let points = h.into_iter().zip(error).map(|(h, error)| ErrorPoint { h, error, stderr: 0.0 }).collect();
    let fit = measure::fit_order(&ErrorCurve::new(points).map_err(py_err)?).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("slope", fit.slope)?;
    d.set_item("intercept", fit.intercept)?;
    d.set_item("r_squared", fit.r_squared)?;
    Ok(d)
}

/// Global error of Euler or symplectic Euler on the harmonic oscillator, as `(h, error, stderr)` rows.
#[pyfunction]
#[pyo3(signature = (method, reference, h_grid, t=15.0, p0=1.0, q0=0.0))]
fn ode_order_curve(method: &str, reference: &str, h_grid: Vec<f64>, t: f64, p0: f64, q0: f64) -> PyResult<Vec<(f64, f64, f64)>> {
    let scheme = match method {
        "euler" => OdeScheme::Euler,
        "symplectic" | "symplectic-euler" => OdeScheme::SymplecticEuler,
        _ => return Err(PyValueError::new_err(format!("method must be 'euler' or 'symplectic', got '{method}'"))),
    };
    let x0 = DVector::from_column_slice(&[p0, q0]);
    let curve = measure::ode_order_curve(scheme, self::reference(reference)?, &x0, t, &h_grid).map_err(py_err)?;
    Ok(curve_points(&curve))
}

/// Weak error of `phi` for Euler-Maruyama or implicit Euler on the OU process.
#[pyfunction]
#[pyo3(signature = (method, reference, h_grid, gamma=1.0, sigma=0.1, x0=10.0, t=1.0, phi="x1^2"))]
#[allow(clippy::too_many_arguments)]
fn ou_order_curve(
    method: &str,
    reference: &str,
    h_grid: Vec<f64>,
    gamma: f64,
    sigma: f64,
    x0: f64,
    t: f64,
    phi: &str,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let phi = parse_observable(phi).map_err(py_err)?;
    let curve = measure::ou_order_curve(
        sde_scheme(method)?,
        self::reference(reference)?,
        gamma,
        sigma,
        x0,
        t,
        &h_grid,
        phi,
        WeakErrorMode::Recursion,
    )
    .map_err(py_err)?;
    Ok(curve_points(&curve))
}

/// Weak error of random coordinate descent against its modified SDE.
#[pyfunction]
#[pyo3(signature = (q, x0, h_grid, phi="x1^2", t=1.0, local=false))]
fn optimizer_order_curve(
    q: &PyQuadratic,
    x0: Vec<f64>,
    h_grid: Vec<f64>,
    phi: &str,
    t: f64,
    local: bool,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let phi = parse_observable(phi).map_err(py_err)?;
    let curve = measure::optimizer_order_curve(&q.inner, &to_vector(x0), t, &h_grid, phi, local).map_err(py_err)?;
    Ok(curve_points(&curve))
}

/// `E φ(X̃(t))` for the modified SDE of single-coordinate descent at step `h`.
#[pyfunction]
#[pyo3(signature = (q, h, x0, t, phi="x1^2"))]
fn moment_oracle(q: &PyQuadratic, h: f64, x0: Vec<f64>, t: f64, phi: &str) -> PyResult<f64> {
    let phi = parse_observable(phi).map_err(py_err)?;
    let obj: Arc<dyn Objective> = Arc::new(q.inner.clone());
    let msde = modsde_core::build_modified_sde(obj, EstimatorKind::single_coordinate(), h).map_err(py_err)?;
    modsde_core::moment_oracle(&msde, &to_vector(x0), t, phi).map_err(py_err)
}

/// Mean-square stability experiment on the modified SDE of single-coordinate descent.
#[pyfunction]
#[pyo3(signature = (q, h, x0, t=3.0, paths=10_000, delta=1e-3, grid=30, seed=0, workers=None))]
#[allow(clippy::too_many_arguments)]
fn stability<'py>(
    py: Python<'py>,
    q: &PyQuadratic,
    h: f64,
    x0: Vec<f64>,
    t: f64,
    paths: usize,
    delta: f64,
    grid: usize,
    seed: u64,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = StabilityConfig { h, x0: to_vector(x0), horizon: t, paths, delta, grid_points: grid, seed, workers };
    let inner = &q.inner;
    let r = py.detach(|| measure::stability_experiment(inner, &cfg)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("alpha", r.alpha)?;
    d.set_item("alpha_sign_flipped", r.alpha_alt)?;
    d.set_item("h_max", r.h_max)?;
    d.set_item("fitted_rate", r.fitted_rate)?;
    d.set_item("delta_sensitivity", r.delta_sensitivity)?;
    d.set_item("bound_holds", r.bound_holds)?;
    d.set_item("rate_holds", r.rate_holds)?;
    let verdict = match r.verdict {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::NotClaimed => "not_claimed",
    };
    d.set_item("verdict", verdict)?;
    let rows: Vec<(f64, f64, f64, f64)> = r.rows.iter().map(|row| (row.t, row.msq, row.stderr, row.bound)).collect();
    d.set_item("rows", rows)?;
    Ok(d)
}

#[pymodule]
fn modsde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuadratic>()?;
    m.add_function(wrap_pyfunction!(sigma_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_enumerated, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_sqrt, m)?)?;
    m.add_function(wrap_pyfunction!(ou_moments, m)?)?;
    m.add_function(wrap_pyfunction!(ou_modified_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(fit_order, m)?)?;
    m.add_function(wrap_pyfunction!(ode_order_curve, m)?)?;
    m.add_function(wrap_pyfunction!(ou_order_curve, m)?)?;
    m.add_function(wrap_pyfunction!(optimizer_order_curve, m)?)?;
    m.add_function(wrap_pyfunction!(moment_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    Ok(())
}
