//! The reconstructed vector field and the field-based divergence bound.
//!
//! Writing the generator of the reference model in terms of the approximate
//! one, `L^mu = L^nu + Theta grad`, isolates the vector field
//!
//! ```text
//! Theta = 1/2 (a^mu - a^nu) grad(rho^mu)/rho^mu + (h^nu - h^mu),
//! h = b - 1/2 d_x a,
//! ```
//!
//! which reduces to the drift difference `b^nu - b^mu` when the diffusions
//! match. Only `|Theta|` enters the divergence bound
//!
//! ```text
//! D_phi(mu_t || nu_t) <= 1/2 int_t0^t int |pinv(sigma^nu) Theta|^2
//!                        phi''(eta_s) eta_s^2 rho_s^nu dx ds,
//! ```
//!
//! so the overall orientation of `Theta` is a convention.

use crate::divergence::{density_floor, divergence};
use crate::error::{LuqError, Result};
use crate::grid::{Axis, GridDensity};
use crate::phi::PhiFunction;
use crate::sde::SdeModel;
use nalgebra::DMatrix;
use serde::Serialize;
use std::io::Write;

/// Relative floor under which the log-gradient of `rho^mu` is masked.
pub const LOG_GRADIENT_FLOOR: f64 = 1e-12;

/// Minimum snapshot count for the time quadrature of the bound.
pub const MIN_SNAPSHOTS: usize = 20;

/// Moore-Penrose pseudo-inverse of a `d x m` matrix via the regularized
/// limit `(sigma^T sigma + eps I)^-1 sigma^T`. The limit is evaluated by
/// iterated Tikhonov refinement at fixed `eps`: each pass multiplies the
/// regularization error in an active direction with singular value `s` by
/// `eps / (s^2 + eps)`, so the iteration converges geometrically to the
/// `eps -> 0` limit while exactly-zero directions stay zero.
pub fn tensor_pseudo_inverse(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let m = sigma.ncols();
    let gram = sigma.transpose() * sigma;
    let scale = gram.norm();
    if scale == 0.0 {
        return DMatrix::zeros(m, sigma.nrows());
    }
    let eps = 1e-3 * scale;
    let lu = (&gram + DMatrix::identity(m, m) * eps).lu();
    let zero = || DMatrix::zeros(m, sigma.nrows());
    let mut x = lu.solve(&sigma.transpose()).unwrap_or_else(zero);
    for _ in 0..256 {
        let resid = sigma.transpose() - &gram * &x;
        let dx = lu.solve(&resid).unwrap_or_else(zero);
        let change = dx.norm();
        x += dx;
        if change <= 1e-15 * x.norm().max(1e-300) {
            break;
        }
    }
    x
}

/// The reconstructed field on a 1-D grid over recorded times, with the two
/// summands retained for diagnostics.
#[derive(Debug, Clone)]
pub struct ThetaField {
    pub axis: Axis,
    pub times: Vec<f64>,
    /// `theta[ti][node]`
    pub theta: Vec<Vec<f64>>,
    /// `1/2 (a^mu - a^nu) grad(rho)/rho` contribution
    pub diffusion_term: Vec<Vec<f64>>,
    /// `h^nu - h^mu` contribution
    pub drift_term: Vec<Vec<f64>>,
    /// false where `rho^mu` is below the log-gradient floor
    pub valid: Vec<Vec<bool>>,
}

impl ThetaField {
    /// CSV export: `t,x,theta,diffusion_term,drift_term,valid`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,theta,diffusion_term,drift_term,valid")?;
        for (ti, t) in self.times.iter().enumerate() {
            for i in 0..self.axis.n {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    t,
                    self.axis.coord(i),
                    self.theta[ti][i],
                    self.diffusion_term[ti][i],
                    self.drift_term[ti][i],
                    self.valid[ti][i] as u8
                )?;
            }
        }
        Ok(())
    }
}

// h = b - 1/2 d_x a for a 1-D Ito model, with d_x a by central differences.
fn h_coefficient(model: &SdeModel, t: f64, x: f64, hstep: f64) -> f64 {
    let mut b = [0.0];
    model.drift_at(t, &[x], &mut b);
    let mut ap = [0.0];
    let mut am = [0.0];
    model.a_at(t, &[x + hstep], &mut ap);
    model.a_at(t, &[x - hstep], &mut am);
    b[0] - 0.5 * (ap[0] - am[0]) / (2.0 * hstep)
}

/// Nodewise log-gradient `grad(rho)/rho` with the below-floor mask,
/// computed as central differences of `ln rho` (exact for Gaussian
/// densities, second order in general).
pub fn log_gradient(rho: &GridDensity) -> (Vec<f64>, Vec<bool>) {
    let axis = *rho.axis(0);
    let n = axis.n;
    let h = axis.step();
    let max = rho.values().iter().cloned().fold(0.0, f64::max);
    let floor = LOG_GRADIENT_FLOOR * max;
    let ln = |i: usize| rho.value(i).ln();
    let mut grad = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if rho.value(i) < floor {
            continue;
        }
        let d = if i == 0 {
            (ln(1) - ln(0)) / h
        } else if i + 1 == n {
            (ln(n - 1) - ln(n - 2)) / h
        } else {
            (ln(i + 1) - ln(i - 1)) / (2.0 * h)
        };
        if d.is_finite() {
            grad[i] = d;
            valid[i] = true;
        }
    }
    (grad, valid)
}

/// Evaluate the reconstructed field for a series of `rho^mu` snapshots
/// (time-tagged, shared 1-D grid). Models must be in Ito form.
pub fn theta_field(
    model_mu: &SdeModel,
    model_nu: &SdeModel,
    rho_mu_series: &[GridDensity],
) -> Result<ThetaField> {
    model_mu.require_ito()?;
    model_nu.require_ito()?;
    if model_mu.dim != 1 || model_nu.dim != 1 {
        return Err(LuqError::InvalidParameter(
            "theta_field handles 1-D models".into(),
        ));
    }
    let first = rho_mu_series.first().ok_or_else(|| {
        LuqError::InsufficientData("theta_field needs at least one snapshot".into())
    })?;
    let axis = *first.axis(0);
    let n = axis.n;
    let hstep = axis.step();
    let mut field = ThetaField {
        axis,
        times: Vec::new(),
        theta: Vec::new(),
        diffusion_term: Vec::new(),
        drift_term: Vec::new(),
        valid: Vec::new(),
    };
    for rho in rho_mu_series {
        rho.require_same_grid(first)?;
        let t = rho.time_tag.ok_or_else(|| {
            LuqError::InvalidParameter("rho^mu snapshots must carry time tags".into())
        })?;
        let (grad, valid) = log_gradient(rho);
        if valid.iter().all(|&v| !v) {
            return Err(LuqError::InsufficientData(format!(
                "rho^mu is entirely below the log-gradient floor at t = {t}"
            )));
        }
        let mut theta = vec![0.0; n];
        let mut dterm = vec![0.0; n];
        let mut bterm = vec![0.0; n];
        let mut a_mu = [0.0];
        let mut a_nu = [0.0];
        for i in 0..n {
            let x = axis.coord(i);
            model_mu.a_at(t, &[x], &mut a_mu);
            model_nu.a_at(t, &[x], &mut a_nu);
            let lg = if valid[i] { grad[i] } else { 0.0 };
            dterm[i] = 0.5 * (a_mu[0] - a_nu[0]) * lg;
            bterm[i] =
                h_coefficient(model_nu, t, x, hstep) - h_coefficient(model_mu, t, x, hstep);
            theta[i] = dterm[i] + bterm[i];
        }
        field.times.push(t);
        field.theta.push(theta);
        field.diffusion_term.push(dterm);
        field.drift_term.push(bterm);
        field.valid.push(valid);
    }
    Ok(field)
}

/// Result of one field-based divergence bound evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionBound {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub t0: f64,
    pub t: f64,
    pub n_snapshots: usize,
    /// space-integrated bound integrand per snapshot time, `(t, value)`
    pub integrand: Vec<[f64; 2]>,
}

impl ReconstructionBound {
    /// CSV export of the integrand time series: `t,integrand`.
    pub fn write_integrand_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,integrand")?;
        for row in &self.integrand {
            writeln!(w, "{},{}", row[0], row[1])?;
        }
        Ok(())
    }
}

/// Evaluate the divergence bound by trapezoidal quadrature in space and over
/// the aligned snapshot times in `[t0, t]`: returns the divergence (lhs), the
/// field integral (rhs) and `margin = rhs - lhs`.
pub fn divergence_bound_reconstruction(
    phi: &PhiFunction,
    rho_mu_series: &[GridDensity],
    rho_nu_series: &[GridDensity],
    theta: &ThetaField,
    model_nu: &SdeModel,
    t0: f64,
    t: f64,
) -> Result<ReconstructionBound> {
    phi.require_c2()?;
    if !(t > t0) {
        return Err(LuqError::InvalidParameter(format!(
            "need t > t0, got [{t0}, {t}]"
        )));
    }
    // collect snapshot triples with matching times inside [t0, t]
    let mut rows: Vec<(f64, &GridDensity, &GridDensity, usize)> = Vec::new();
    for (ti, &ts) in theta.times.iter().enumerate() {
        if ts < t0 - 1e-12 || ts > t + 1e-12 {
            continue;
        }
        let mu = rho_mu_series
            .iter()
            .find(|r| (r.time_tag.unwrap_or(f64::MAX) - ts).abs() < 1e-9);
        let nu = rho_nu_series
            .iter()
            .find(|r| (r.time_tag.unwrap_or(f64::MAX) - ts).abs() < 1e-9);
        if let (Some(mu), Some(nu)) = (mu, nu) {
            mu.require_same_grid(nu)?;
            rows.push((ts, mu, nu, ti));
        }
    }
    if rows.len() < MIN_SNAPSHOTS {
        return Err(LuqError::InsufficientData(format!(
            "bound quadrature needs at least {MIN_SNAPSHOTS} aligned snapshots in [{t0}, {t}], found {}",
            rows.len()
        )));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let axis = theta.axis;
    let mut a_nu = [0.0];
    let mut integrand_t = Vec::with_capacity(rows.len());
    for &(ts, mu, nu, ti) in &rows {
        let floor_nu = density_floor(nu);
        let max_mu = mu.values().iter().cloned().fold(0.0, f64::max);
        let floor_mu = LOG_GRADIENT_FLOOR * max_mu;
        let mut total = 0.0;
        for i in 0..axis.n {
            let rn = nu.value(i);
            let rm = mu.value(i);
            if rn <= floor_nu || rm < floor_mu {
                continue;
            }
            let x = axis.coord(i);
            model_nu.a_at(ts, &[x], &mut a_nu);
            if a_nu[0] <= 0.0 {
                return Err(LuqError::InvalidParameter(format!(
                    "sigma^nu vanishes at x = {x}; the bound needs sigma^nu != 0"
                )));
            }
            let eta = rm / rn;
            let th = theta.theta[ti][i];
            // 1-D row diffusion: |pinv(sigma) Theta|^2 = Theta^2 / a
            let weight = nu.quad_weight(i);
            total += weight * th * th / a_nu[0] * phi.d2phi(eta)? * eta * eta * rn;
        }
        integrand_t.push((ts, 0.5 * total));
    }

    let mut rhs = 0.0;
    for k in 1..integrand_t.len() {
        let (s0, f0) = integrand_t[k - 1];
        let (s1, f1) = integrand_t[k];
        rhs += 0.5 * (f0 + f1) * (s1 - s0);
    }

    let (_, mu_t, nu_t, _) = rows[rows.len() - 1];
    let lhs = divergence(phi, mu_t, nu_t)?;
    if !lhs.is_finite() {
        return Err(LuqError::InfiniteDivergence(
            "lhs divergence hit the absolute-continuity sentinel".into(),
        ));
    }
    Ok(ReconstructionBound {
        lhs,
        rhs,
        margin: rhs - lhs,
        t0,
        t,
        n_snapshots: rows.len(),
        integrand: integrand_t.iter().map(|&(s, v)| [s, v]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::catalog;
    use crate::sde::Calculus;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn svd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
        m.clone().svd(true, true).pseudo_inverse(1e-12).unwrap()
    }

    fn check_inv_prop(sigma: &DMatrix<f64>, tol: f64) {
        let pinv = tensor_pseudo_inverse(sigma);
        let a = sigma * sigma.transpose();
        let pinv_t = tensor_pseudo_inverse(&sigma.transpose());
        let a_pinv = &pinv_t * &pinv;

        // sigma = a pinv^T
        let r1 = (&a * pinv.transpose() - sigma).norm();
        assert!(r1 < tol, "sigma = a pinv^T: residual {r1}");
        // sigma^T = pinv a
        let r2 = (&pinv * &a - sigma.transpose()).norm();
        assert!(r2 < tol, "sigma^T = pinv a: residual {r2}");
        // pinv = pinv pinv(sigma^T) sigma^T
        let r3 = (&pinv * &pinv_t * sigma.transpose() - &pinv).norm();
        assert!(r3 < tol, "idempotency: residual {r3}");
        // pinv = sigma^T pinv(a)
        let r4 = (sigma.transpose() * &a_pinv - &pinv).norm();
        assert!(r4 < tol, "pinv = sigma^T pinv(a): residual {r4}");
    }

    #[test]
    fn pseudo_inverse_examples() {
        let zero = DMatrix::<f64>::zeros(2, 3);
        assert_eq!(tensor_pseudo_inverse(&zero), DMatrix::<f64>::zeros(3, 2));

        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((tensor_pseudo_inverse(&eye) - &eye).norm() < 1e-10);

        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        let got = tensor_pseudo_inverse(&diag);
        assert!((&got - &expected).norm() < 1e-10, "{got}");
        assert!((&got - svd_pinv(&diag)).norm() < 1e-10);
    }

    fn random_orthogonal(n: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| {
            rand_distr::StandardNormal.sample(rng)
        });
        m.qr().q()
    }

    #[test]
    fn inv_prop_identities_on_random_matrices() {
        // random factors with singular values in {0} union [0.3, 3]:
        // rank-deficiency through exact zeros
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        for case in 0..100 {
            let d = rng.random_range(1..5usize);
            let m = rng.random_range(1..5usize);
            let k = d.min(m);
            let mut svals = DMatrix::<f64>::zeros(d, m);
            let mut any_zero = false;
            for i in 0..k {
                if case % 3 == 0 && (i == k - 1 || rng.random_bool(0.3)) {
                    any_zero = true;
                } else {
                    svals[(i, i)] = rng.random_range(0.3..3.0);
                }
            }
            let _ = any_zero;
            let u = random_orthogonal(d, &mut rng);
            let v = random_orthogonal(m, &mut rng);
            let sigma = &u * svals * v.transpose();
            check_inv_prop(&sigma, 1e-10);
            let pinv = tensor_pseudo_inverse(&sigma);
            let svd = svd_pinv(&sigma);
            assert!(
                (&pinv - &svd).norm() < 1e-10,
                "case {case}: vs svd oracle, residual {}",
                (&pinv - &svd).norm()
            );
        }
    }

    fn gaussian_series(axis: Axis, times: &[f64], var: impl Fn(f64) -> f64) -> Vec<GridDensity> {
        times
            .iter()
            .map(|&t| {
                GridDensity::gaussian_1d(axis, 0.0, var(t))
                    .unwrap()
                    .with_time(t)
            })
            .collect()
    }

    #[test]
    fn theta_is_drift_difference_for_equal_diffusions() {
        let mu = SdeModel::ou(1.0, 0.0, std::f64::consts::SQRT_2);
        let nu = SdeModel::ou(2.0, 0.0, std::f64::consts::SQRT_2);
        let axis = Axis::new(-8.0, 8.0, 401).unwrap();
        let series = gaussian_series(axis, &[0.3], |_| 1.0);
        let field = theta_field(&mu, &nu, &series).unwrap();
        for i in 0..axis.n {
            let x = axis.coord(i);
            // b^nu - b^mu = -2x + x = -x, exactly
            assert_eq!(field.theta[0][i], -x, "x = {x}");
            assert_eq!(field.diffusion_term[0][i], 0.0);
        }
    }

    #[test]
    fn theta_vanishes_for_identical_models() {
        let m = SdeModel::scalar(
            Calculus::Ito,
            |_, x| x - x * x * x,
            |_, x| 1.0 + 0.1 * x * x,
            "dw",
        );
        let axis = Axis::new(-5.0, 5.0, 301).unwrap();
        let series = gaussian_series(axis, &[0.1], |_| 1.0);
        let field = theta_field(&m, &m, &series).unwrap();
        for i in 0..axis.n {
            assert!(field.theta[0][i].abs() < 1e-12);
        }
    }

    #[test]
    fn log_gradient_matches_gaussian_closed_form() {
        let axis = Axis::new(-10.0, 10.0, 2001).unwrap();
        let rho = GridDensity::gaussian_1d(axis, 0.4, 1.3).unwrap();
        let (grad, valid) = log_gradient(&rho);
        let max = rho.values().iter().cloned().fold(0.0, f64::max);
        for i in 0..axis.n {
            if rho.value(i) >= 1e-8 * max {
                assert!(valid[i]);
                let x = axis.coord(i);
                let exact = -(x - 0.4) / 1.3;
                assert!(
                    (grad[i] - exact).abs() <= 1e-4,
                    "x = {x}: {} vs {exact}",
                    grad[i]
                );
            }
        }
    }

    // OU pair with common initial density: both marginals stay Gaussian, so
    // the bound's two sides have independent closed forms.
    fn ou_pair_bound(phi_name: &str, beta_nu: f64, t: f64) -> ReconstructionBound {
        let mu = SdeModel::ou(1.0, 0.0, std::f64::consts::SQRT_2);
        let nu = SdeModel::ou(beta_nu, 0.0, std::f64::consts::SQRT_2);
        let axis = Axis::new(-10.0, 10.0, 1001).unwrap();
        let times: Vec<f64> = (0..=40).map(|k| t * k as f64 / 40.0).collect();
        let mu_series = gaussian_series(axis, &times, |_| 1.0);
        let nu_var =
            move |s: f64| 1.0 / beta_nu + (1.0 - 1.0 / beta_nu) * (-2.0 * beta_nu * s).exp();
        let nu_series = gaussian_series(axis, &times, nu_var);
        let field = theta_field(&mu, &nu, &mu_series).unwrap();
        let phi = catalog(phi_name, None).unwrap();
        divergence_bound_reconstruction(&phi, &mu_series, &nu_series, &field, &nu, 0.0, t).unwrap()
    }

    #[test]
    fn ou_pair_kl_bound_holds_with_analytic_values() {
        let r = ou_pair_bound("kl", 2.0, 0.5);
        // lhs: KL(N(0,1) || N(0, (1 + e^-2)/2)); rhs: integral of x^2 rho/4
        let v_nu = 0.5 * (1.0 + (-2.0_f64).exp());
        let lhs_exact = 0.5 * (1.0 / v_nu - 1.0 - (1.0 / v_nu).ln());
        assert!(
            (r.lhs - lhs_exact).abs() < 1e-4,
            "lhs {} vs {lhs_exact}",
            r.lhs
        );
        assert!((r.rhs - 0.125).abs() < 1e-3, "rhs {} vs 0.125", r.rhs);
        assert!(r.margin >= -1e-3, "margin {}", r.margin);
    }

    #[test]
    fn identical_models_give_zero_bound() {
        let r = ou_pair_bound("kl", 1.0, 0.5);
        assert!(r.lhs.abs() < 1e-10 && r.rhs.abs() < 1e-10);
    }

    #[test]
    fn rhs_shrinks_with_the_time_interval() {
        let r1 = ou_pair_bound("kl", 2.0, 0.4);
        let r2 = ou_pair_bound("kl", 2.0, 0.2);
        let r3 = ou_pair_bound("kl", 2.0, 0.1);
        assert!(r1.rhs > r2.rhs && r2.rhs > r3.rhs);
    }

    #[test]
    fn tv_generator_is_rejected() {
        let mu = SdeModel::ou(1.0, 0.0, 1.0);
        let axis = Axis::new(-8.0, 8.0, 201).unwrap();
        let series = gaussian_series(axis, &[0.0], |_| 1.0);
        let field = theta_field(&mu, &mu, &series).unwrap();
        let tv = catalog("tv", None).unwrap();
        assert!(matches!(
            divergence_bound_reconstruction(&tv, &series, &series, &field, &mu, 0.0, 0.5),
            Err(LuqError::Capability(_))
        ));
    }
}
