//! Python bindings: the main types and operations of the toolkit.
//!
//! Densities travel as plain lists of node values on uniform grids; report
//! structures are returned as JSON strings so downstream tooling can parse
//! them with the standard library.

use luq_core::bounds::{evaluate_report, Observable};
use luq_core::divergence as divergence_mod;
use luq_core::error::LuqError;
use luq_core::ftdr;
use luq_core::grid::{Axis, GridDensity};
use luq_core::kolmogorov;
use luq_core::sde;
use luq_core::slowfast;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: LuqError) -> PyErr {
    match e {
        LuqError::NonFinite(_) | LuqError::Stability { .. } | LuqError::InfiniteDivergence(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A divergence generator from the catalog.
#[pyclass(name = "Phi", from_py_object)]
#[derive(Clone)]
struct PyPhi {
    inner: luq_core::PhiFunction,
}

#[pymethods]
impl PyPhi {
    #[new]
    #[pyo3(signature = (name, alpha=None))]
    fn new(name: &str, alpha: Option<f64>) -> PyResult<Self> {
        Ok(PyPhi {
            inner: luq_core::catalog(name, alpha).map_err(err)?,
        })
    }

    fn name(&self) -> String {
        self.inner.name()
    }

    fn phi(&self, u: f64) -> f64 {
        self.inner.phi(u)
    }

    fn dphi(&self, u: f64) -> f64 {
        self.inner.dphi(u)
    }

    fn conj(&self, s: f64) -> f64 {
        self.inner.conj(s)
    }

    fn dconj(&self, s: f64) -> f64 {
        self.inner.dconj(s)
    }

    fn d2conj0(&self) -> Option<f64> {
        self.inner.d2conj0()
    }

    #[pyo3(signature = (s, u_max=1e4, n=4000))]
    fn conjugate_numeric(&self, s: f64, u_max: f64, n: usize) -> f64 {
        luq_core::conjugate_numeric(&self.inner, s, u_max, n)
    }

    fn __repr__(&self) -> String {
        format!("Phi({})", self.inner.name())
    }
}

/// A probability density on a uniform 1-D grid.
#[pyclass(name = "Density", from_py_object)]
#[derive(Clone)]
struct PyDensity {
    inner: GridDensity,
}

#[pymethods]
impl PyDensity {
    /// Normalized Gaussian sampled on the grid.
    #[staticmethod]
    fn gaussian(lo: f64, hi: f64, n: usize, mean: f64, var: f64) -> PyResult<Self> {
        let axis = Axis::new(lo, hi, n).map_err(err)?;
        Ok(PyDensity {
            inner: GridDensity::gaussian_1d(axis, mean, var).map_err(err)?,
        })
    }

    /// Density from raw nonnegative node values (renormalized).
    #[staticmethod]
    fn from_values(lo: f64, hi: f64, values: Vec<f64>) -> PyResult<Self> {
        let axis = Axis::new(lo, hi, values.len()).map_err(err)?;
        Ok(PyDensity {
            inner: GridDensity::new_1d(axis, values).map_err(err)?,
        })
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn grid(&self) -> Vec<f64> {
        self.inner.axis(0).coords()
    }

    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    fn moments(&self) -> (f64, f64) {
        self.inner.moments(0)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A 1-D SDE model (drift/diffusion polynomials or presets).
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: sde::SdeModel,
}

#[pymethods]
impl PyModel {
    /// Ornstein-Uhlenbeck: `dX = -beta (X - mean) dt + sigma dW`.
    #[staticmethod]
    #[pyo3(signature = (beta, sigma, mean=0.0))]
    fn ou(beta: f64, sigma: f64, mean: f64) -> Self {
        PyModel {
            inner: sde::SdeModel::ou(beta, mean, sigma),
        }
    }

    /// Drift and diffusion as polynomial coefficient lists (constant first).
    #[staticmethod]
    fn polynomial(drift: Vec<f64>, diffusion: Vec<f64>) -> PyResult<Self> {
        if drift.is_empty() || diffusion.is_empty() {
            return Err(PyValueError::new_err("coefficient lists must be nonempty"));
        }
        let horner = |c: &[f64], x: f64| c.iter().rev().fold(0.0, |acc, &k| acc * x + k);
        let (dc, sc) = (drift, diffusion);
        Ok(PyModel {
            inner: sde::SdeModel::scalar(
                sde::Calculus::Ito,
                move |_, x| horner(&dc, x),
                move |_, x| horner(&sc, x),
                "polynomial",
            ),
        })
    }

    fn tag(&self) -> String {
        self.inner.tag.clone()
    }
}

/// `D_phi(mu || nu)` on a shared grid; `inf` signals an
/// absolute-continuity failure at grid resolution.
#[pyfunction]
fn divergence(phi: &PyPhi, mu: &PyDensity, nu: &PyDensity) -> PyResult<f64> {
    divergence_mod::divergence(&phi.inner, &mu.inner, &nu.inner).map_err(err)
}

/// Full observable-error report (JSON): divergence, B+-, linearization,
/// Chapman-Robbins and total-variation comparison bounds.
#[pyfunction]
fn bound_report(phi: &PyPhi, mu: &PyDensity, nu: &PyDensity, g: Vec<f64>) -> PyResult<String> {
    let obs = Observable::new(g).map_err(err)?;
    let report = evaluate_report(&phi.inner, &mu.inner, &nu.inner, &obs).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Euler-Maruyama ensemble states at `t1` for a seeded run.
#[pyfunction]
fn integrate_em(
    model: &PyModel,
    init: Vec<f64>,
    t0: f64,
    t1: f64,
    dt: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let ens = sde::integrate_em(
        &model.inner,
        &init,
        t0,
        t1,
        dt,
        &sde::RngSpec::new(seed),
        &[t1],
    )
    .map_err(err)?;
    Ok(ens.states_at(0).to_vec())
}

/// Forward Kolmogorov solve; returns the density at `t1`.
#[pyfunction]
#[pyo3(signature = (model, rho0, t0, t1, dt=None))]
fn fpe_solve(
    model: &PyModel,
    rho0: &PyDensity,
    t0: f64,
    t1: f64,
    dt: Option<f64>,
) -> PyResult<PyDensity> {
    let axis = *rho0.inner.axis(0);
    let dt = dt.unwrap_or_else(|| {
        let h = axis.step();
        let mut a_max = 0.0_f64;
        let mut a = [0.0];
        for i in 0..axis.n {
            model.inner.a_at(t0, &[axis.coord(i)], &mut a);
            a_max = a_max.max(a[0]);
        }
        if a_max > 0.0 {
            0.9 * kolmogorov::CFL_FACTOR * h * h / a_max
        } else {
            1e-3
        }
    });
    let sol = kolmogorov::fpe_solve(&model.inner, &rho0.inner, t0, t1, dt, &[t1]).map_err(err)?;
    Ok(PyDensity {
        inner: sol.snapshots.into_iter().next().unwrap(),
    })
}

/// Gaussian KDE of samples on a uniform grid.
#[pyfunction]
#[pyo3(signature = (samples, lo, hi, n, bandwidth=None))]
fn kde(samples: Vec<f64>, lo: f64, hi: f64, n: usize, bandwidth: Option<f64>) -> PyResult<PyDensity> {
    let axis = Axis::new(lo, hi, n).map_err(err)?;
    let (d, _) = kolmogorov::kde_estimate(&samples, 1, &[axis], bandwidth.map(|h| vec![h]))
        .map_err(err)?;
    Ok(PyDensity { inner: d })
}

/// Finite-time divergence rate `D_phi(mu_t || mu_t0) / |t - t0|`.
#[pyfunction]
fn ftdr_rate(phi: &PyPhi, mu_t: &PyDensity, mu_t0: &PyDensity, t: f64, t0: f64) -> PyResult<f64> {
    ftdr::ftdr(&phi.inner, &mu_t.inner, &mu_t0.inner, t, t0).map_err(err)
}

/// FTDR difference-bound check; returns `(lhs, rhs, margin, conclusive)`.
#[pyfunction]
fn ftdr_bound_check(
    phi: &PyPhi,
    mu_t: &PyDensity,
    nu_t: &PyDensity,
    mu_t0: &PyDensity,
) -> PyResult<(f64, f64, f64, bool)> {
    let c = ftdr::ftdr_bound_check(&phi.inner, &mu_t.inner, &nu_t.inner, &mu_t0.inner)
        .map_err(err)?;
    Ok((c.lhs, c.rhs, c.margin, c.conclusive))
}

/// Pathspace finite-marginal bound (JSON with per-term breakdown).
#[pyfunction]
fn pathspace_bound(
    phi: &PyPhi,
    mus: Vec<PyDensity>,
    nus: Vec<PyDensity>,
    mu_t0: &PyDensity,
    t0: f64,
    times: Vec<f64>,
) -> PyResult<String> {
    let mus: Vec<GridDensity> = mus.into_iter().map(|d| d.inner).collect();
    let nus: Vec<GridDensity> = nus.into_iter().map(|d| d.inner).collect();
    let b = ftdr::pathspace_marginal_bound(&phi.inner, &mus, &nus, &mu_t0.inner, t0, &times)
        .map_err(err)?;
    serde_json::to_string(&b).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Run the slow-fast comparison; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (beta, gamma, sigma_x, sigma_y, eps, t_final=0.5, n_traj=20_000, seed=1, n_snapshots=21, n_bootstrap=100))]
#[allow(clippy::too_many_arguments)]
fn case_study(
    beta: f64,
    gamma: f64,
    sigma_x: f64,
    sigma_y: f64,
    eps: f64,
    t_final: f64,
    n_traj: usize,
    seed: u64,
    n_snapshots: usize,
    n_bootstrap: usize,
) -> PyResult<String> {
    let p = slowfast::SlowFastParams::new(beta, gamma, sigma_x, sigma_y, eps).map_err(err)?;
    let cfg = slowfast::CaseStudyConfig {
        t_final,
        n_traj,
        n_snapshots,
        n_bootstrap,
        ..Default::default()
    };
    let out = slowfast::compare_reductions(&p, &cfg, &sde::RngSpec::new(seed)).map_err(err)?;
    serde_json::to_string(&out.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn luq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPhi>()?;
    m.add_class::<PyDensity>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(divergence, m)?)?;
    m.add_function(wrap_pyfunction!(bound_report, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_em, m)?)?;
    m.add_function(wrap_pyfunction!(fpe_solve, m)?)?;
    m.add_function(wrap_pyfunction!(kde, m)?)?;
    m.add_function(wrap_pyfunction!(ftdr_rate, m)?)?;
    m.add_function(wrap_pyfunction!(ftdr_bound_check, m)?)?;
    m.add_function(wrap_pyfunction!(pathspace_bound, m)?)?;
    m.add_function(wrap_pyfunction!(case_study, m)?)?;
    Ok(())
}
