//! The slow-fast case study: a linearly damped slow variable forced by the
//! square of a fast Ornstein-Uhlenbeck variable,
//!
//! ```text
//! dX = (-beta X + Y^2) dt + sigma_x dB
//! dY = -(gamma / eps) Y dt + (sigma_y / sqrt(eps)) dW,
//! ```
//!
//! compared against two reduced models: the averaged equation (I), which
//! replaces `Y^2` by its equilibrium mean `sigma_y^2 / (2 gamma)`, and the
//! fluctuation-corrected equation (F), which adds the diffusion
//! `sqrt(eps) sigma_y^2 / sqrt(2 gamma^3)` from the central limit behaviour
//! of the averaging error. The divergence bounds for both reductions are
//! evaluated from the correction fields `C_1, C_2, C_3` extracted from the
//! joint density of the full system.

use crate::divergence::divergence;
use crate::error::{LuqError, Result};
use crate::grid::{Axis, GridDensity};
use crate::kolmogorov::{kde_estimate, marginalize, KdeInfo};
use crate::phi::catalog;
use crate::sde::{integrate_em, Calculus, RngSpec, SdeModel};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::sync::Arc;

/// Parameters of the slow-fast system.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlowFastParams {
    pub beta: f64,
    pub gamma: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub eps: f64,
}

impl SlowFastParams {
    pub fn new(beta: f64, gamma: f64, sigma_x: f64, sigma_y: f64, eps: f64) -> Result<Self> {
        let p = SlowFastParams {
            beta,
            gamma,
            sigma_x,
            sigma_y,
            eps,
        };
        if !(beta > 0.0 && gamma > 0.0 && sigma_x > 0.0 && sigma_y > 0.0) {
            return Err(LuqError::InvalidParameter(
                "slow-fast parameters must be strictly positive".into(),
            ));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(LuqError::InvalidParameter(format!(
                "eps must lie in (0, 1), got {eps}"
            )));
        }
        Ok(p)
    }

    /// Validity flag of the small-eps expansion:
    /// `eps sigma_y^4 / (2 sigma_x^2 gamma^3) <= 1`.
    pub fn small_eps(&self) -> bool {
        self.eps * self.sigma_y.powi(4) / (2.0 * self.sigma_x * self.sigma_x * self.gamma.powi(3))
            <= 1.0
    }

    /// Equilibrium mean of `Y^2`: `sigma_y^2 / (2 gamma)`.
    pub fn fast_variance(&self) -> f64 {
        self.sigma_y * self.sigma_y / (2.0 * self.gamma)
    }

    /// Extra diffusion coefficient of the fluctuation model,
    /// `sqrt(eps) sigma_y^2 / sqrt(2 gamma^3)`.
    pub fn fluctuation_sigma(&self) -> f64 {
        self.eps.sqrt() * self.sigma_y * self.sigma_y / (2.0 * self.gamma.powi(3)).sqrt()
    }
}

/// The 2-D slow-fast system in Ito form (additive noise, so no correction).
pub fn full_model(p: &SlowFastParams) -> SdeModel {
    let (beta, gamma, sigma_x, sigma_y, eps) = (p.beta, p.gamma, p.sigma_x, p.sigma_y, p.eps);
    SdeModel::new(
        2,
        2,
        Calculus::Ito,
        Arc::new(move |_t, z, out| {
            out[0] = -beta * z[0] + z[1] * z[1];
            out[1] = -gamma / eps * z[1];
        }),
        Arc::new(move |_t, _z, out| {
            out[0] = sigma_x;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = sigma_y / eps.sqrt();
        }),
        format!("slowfast(eps={eps})"),
    )
}

/// The averaged reduction (I): `dX = (-beta X + sigma_y^2/(2 gamma)) dt + sigma_x dB`.
pub fn averaged_model(p: &SlowFastParams) -> SdeModel {
    let (beta, sigma_x) = (p.beta, p.sigma_x);
    let c = p.fast_variance();
    SdeModel::scalar(
        Calculus::Ito,
        move |_, x| -beta * x + c,
        move |_, _| sigma_x,
        "slowfast-averaged",
    )
}

/// The fluctuation reduction (F): the averaged drift plus the independent
/// extra noise channel, total diffusion `a = sigma_x^2 + eps sigma_y^4 / (2 gamma^3)`.
pub fn fluctuation_model(p: &SlowFastParams) -> SdeModel {
    let (beta, sigma_x) = (p.beta, p.sigma_x);
    let c = p.fast_variance();
    let s_f = p.fluctuation_sigma();
    SdeModel::new(
        1,
        2,
        Calculus::Ito,
        Arc::new(move |_t, x, out| out[0] = -beta * x[0] + c),
        Arc::new(move |_t, _x, out| {
            out[0] = sigma_x;
            out[1] = s_f;
        }),
        "slowfast-fluctuation",
    )
}

/// The fast subsystem's ergodic invariant density: `N(0, sigma_y^2 / (2 gamma))`
/// on the given y-grid, independent of the frozen slow variable. (The printed
/// prefactor of the invariant measure does not integrate to one; the
/// correctly normalized Gaussian constant is used.)
pub fn fast_invariant_density(p: &SlowFastParams, y_axis: Axis) -> Result<GridDensity> {
    GridDensity::gaussian_1d(y_axis, 0.0, p.fast_variance())
}

/// Which reduced model a Gaussian evolution refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Reduced {
    Averaged,
    Fluctuation,
}

/// Mean and variance at time `t` of a reduced model started from
/// `N(m0, v0)`; both reductions are linear SDEs, so the law stays Gaussian.
pub fn reduced_moments(p: &SlowFastParams, which: Reduced, m0: f64, v0: f64, t: f64) -> (f64, f64) {
    let beta = p.beta;
    let c = p.fast_variance();
    let a = match which {
        Reduced::Averaged => p.sigma_x * p.sigma_x,
        Reduced::Fluctuation => {
            p.sigma_x * p.sigma_x + p.fluctuation_sigma() * p.fluctuation_sigma()
        }
    };
    let decay = (-beta * t).exp();
    let mean = m0 * decay + c / beta * (1.0 - decay);
    let var = v0 * decay * decay + a / (2.0 * beta) * (1.0 - decay * decay);
    (mean, var)
}

/// The correction fields at one time, on the slow grid.
#[derive(Debug, Clone)]
pub struct CCoefficients {
    pub axis: Axis,
    /// `int [rho(y|x) - Pi(y)] dy` (zero up to quadrature error)
    pub c1: Vec<f64>,
    /// `int y^2 [rho(y|x) - Pi(y)] dy`
    pub c2: Vec<f64>,
    /// `eps^-1 C_3`, from the residual identity
    /// `eps^-1 int L_y* rho dy = d_t rho - L_x* rho + d_x int y^2 rho dy`
    pub c3_scaled: Vec<f64>,
    /// `K = -beta x C_1 + C_2`
    pub k_eps: Vec<f64>,
    /// false where the slow marginal is below floor
    pub valid: Vec<bool>,
}

const RHO_FLOOR_REL: f64 = 1e-12;

fn d1_line(f: &[f64], i: usize, h: f64) -> f64 {
    let n = f.len();
    if i == 0 {
        (f[1] - f[0]) / h
    } else if i + 1 == n {
        (f[n - 1] - f[n - 2]) / h
    } else {
        (f[i + 1] - f[i - 1]) / (2.0 * h)
    }
}

fn d2_line(f: &[f64], i: usize, h: f64) -> f64 {
    let n = f.len();
    let j = i.clamp(1, n - 2);
    (f[j + 1] - 2.0 * f[j] + f[j - 1]) / (h * h)
}

/// Extract the correction fields from one joint snapshot. The time
/// derivative of the slow marginal is supplied as nodewise values
/// (callers difference neighbouring snapshots).
pub fn c_coefficients(
    joint: &GridDensity,
    drho_dt: &[f64],
    p: &SlowFastParams,
) -> Result<CCoefficients> {
    if joint.dims() != 2 {
        return Err(LuqError::InvalidParameter(
            "c_coefficients needs the 2-D joint density".into(),
        ));
    }
    let ax = *joint.axis(0);
    let ay = *joint.axis(1);
    if drho_dt.len() != ax.n {
        return Err(LuqError::GridMismatch(
            "drho_dt length vs slow grid".into(),
        ));
    }
    let hx = ax.step();
    let ny = ay.n;
    let y_w: Vec<f64> = (0..ny)
        .map(|iy| {
            let h = ay.step();
            if iy == 0 || iy + 1 == ny {
                0.5 * h
            } else {
                h
            }
        })
        .collect();

    // slow marginal and the y-moments M0(x), M2(x)
    let mut rho = vec![0.0; ax.n];
    let mut m2 = vec![0.0; ax.n];
    for ix in 0..ax.n {
        for (iy, &w) in y_w.iter().enumerate() {
            let v = joint.value(ix * ny + iy);
            let y = ay.coord(iy);
            rho[ix] += w * v;
            m2[ix] += w * y * y * v;
        }
    }
    let rho_max = rho.iter().cloned().fold(0.0, f64::max);
    let floor = RHO_FLOOR_REL * rho_max;

    let pi_var = p.fast_variance();
    // Pi moments on the truncated y-grid, so that C1/C2 compare like with like
    let pi = fast_invariant_density(p, ay)?;
    let pi_mass: f64 = (0..ny).map(|iy| y_w[iy] * pi.value(iy)).sum();
    let pi_second: f64 = (0..ny)
        .map(|iy| {
            let y = ay.coord(iy);
            y_w[iy] * y * y * pi.value(iy)
        })
        .sum();
    let _ = pi_var;

    let mut c1 = vec![0.0; ax.n];
    let mut c2 = vec![0.0; ax.n];
    let mut valid = vec![false; ax.n];
    for ix in 0..ax.n {
        if rho[ix] < floor {
            continue;
        }
        valid[ix] = true;
        // the conditional integrates to one by construction, so C1 carries
        // only the y-truncation error of Pi; C2 compares second moments
        c1[ix] = 1.0 - pi_mass;
        c2[ix] = m2[ix] / rho[ix] - pi_second;
    }

    // residual: eps^-1 int L_y* rho dy = d_t rho - L_x* rho + d_x M2,
    // with L_x* rho = d_x(beta x rho) + sigma_x^2/2 d_xx rho
    let mut residual = vec![0.0; ax.n];
    let bxr: Vec<f64> = (0..ax.n)
        .map(|ix| p.beta * ax.coord(ix) * rho[ix])
        .collect();
    for ix in 0..ax.n {
        let lx = d1_line(&bxr, ix, hx) + 0.5 * p.sigma_x * p.sigma_x * d2_line(&rho, ix, hx);
        residual[ix] = drho_dt[ix] - lx + d1_line(&m2, ix, hx);
    }
    // antiderivative from the left grid boundary
    let mut c3_scaled = vec![0.0; ax.n];
    for ix in 1..ax.n {
        c3_scaled[ix] = c3_scaled[ix - 1] + 0.5 * (residual[ix - 1] + residual[ix]) * hx;
    }

    let k_eps = (0..ax.n)
        .map(|ix| -p.beta * ax.coord(ix) * c1[ix] + c2[ix])
        .collect();

    Ok(CCoefficients {
        axis: ax,
        c1,
        c2,
        c3_scaled,
        k_eps,
        valid,
    })
}

/// The reconstruction fields of both reduced models over snapshot times:
/// `Theta_I = K - (sigma_x^2 / 2) rho^-1 d_x(C_1 rho) - eps^-1 rho^-1 C_3`
/// and `Theta_F = Theta_I + eps sigma_y^4 / (4 gamma^3) d_x log rho`.
#[derive(Debug, Clone)]
pub struct SlowFastThetas {
    pub axis: Axis,
    pub times: Vec<f64>,
    pub theta_i: Vec<Vec<f64>>,
    pub theta_f: Vec<Vec<f64>>,
    /// slow marginal at each time
    pub rho: Vec<Vec<f64>>,
    pub valid: Vec<Vec<bool>>,
}

/// Build the reduction fields from time-tagged joint snapshots (uniformly
/// spaced times; one-sided time differences at the series edges).
pub fn slowfast_thetas(joints: &[GridDensity], p: &SlowFastParams) -> Result<SlowFastThetas> {
    if joints.len() < 3 {
        return Err(LuqError::InsufficientData(
            "theta extraction needs at least 3 snapshots for the time derivative".into(),
        ));
    }
    let ax = *joints[0].axis(0);
    let hx = ax.step();
    let marginals: Vec<GridDensity> = joints
        .iter()
        .map(|j| Ok(marginalize(j, 1)?.with_time(j.time_tag.unwrap_or(0.0))))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = joints
        .iter()
        .map(|j| {
            j.time_tag.ok_or_else(|| {
                LuqError::InvalidParameter("joint snapshots must carry time tags".into())
            })
        })
        .collect::<Result<_>>()?;

    let mut out = SlowFastThetas {
        axis: ax,
        times: times.clone(),
        theta_i: Vec::new(),
        theta_f: Vec::new(),
        rho: Vec::new(),
        valid: Vec::new(),
    };
    let lam = p.eps * p.sigma_y.powi(4) / (4.0 * p.gamma.powi(3));
    for j in 0..joints.len() {
        // time derivative of the slow marginal
        let drho: Vec<f64> = (0..ax.n)
            .map(|ix| {
                if j == 0 {
                    (marginals[1].value(ix) - marginals[0].value(ix)) / (times[1] - times[0])
                } else if j + 1 == joints.len() {
                    (marginals[j].value(ix) - marginals[j - 1].value(ix))
                        / (times[j] - times[j - 1])
                } else {
                    (marginals[j + 1].value(ix) - marginals[j - 1].value(ix))
                        / (times[j + 1] - times[j - 1])
                }
            })
            .collect();
        let cc = c_coefficients(&joints[j], &drho, p)?;
        let rho: Vec<f64> = (0..ax.n).map(|ix| marginals[j].value(ix)).collect();
        let c1_rho: Vec<f64> = (0..ax.n).map(|ix| cc.c1[ix] * rho[ix]).collect();
        let mut th_i = vec![0.0; ax.n];
        let mut th_f = vec![0.0; ax.n];
        for ix in 0..ax.n {
            if !cc.valid[ix] {
                continue;
            }
            let inv_rho = 1.0 / rho[ix];
            th_i[ix] = cc.k_eps[ix]
                - 0.5 * p.sigma_x * p.sigma_x * inv_rho * d1_line(&c1_rho, ix, hx)
                - inv_rho * cc.c3_scaled[ix];
            let dlog = d1_line(&rho, ix, hx) * inv_rho;
            th_f[ix] = th_i[ix] + lam * dlog;
        }
        out.theta_i.push(th_i);
        out.theta_f.push(th_f);
        out.rho.push(rho);
        out.valid.push(cc.valid);
    }
    Ok(out)
}

// Quadrature core shared by the divergence bounds:
// 1/2 int_0^t int theta^2 / denom * rho dx ds over the snapshot times.
fn kl_bound_quadrature(
    axis: &Axis,
    times: &[f64],
    thetas: &[Vec<f64>],
    rhos: &[Vec<f64>],
    valid: &[Vec<bool>],
    denom: f64,
    t: f64,
) -> f64 {
    let mut per_time = Vec::with_capacity(times.len());
    for (ti, &ts) in times.iter().enumerate() {
        if ts > t + 1e-12 {
            break;
        }
        let mut total = 0.0;
        for ix in 0..axis.n {
            if !valid[ti][ix] {
                continue;
            }
            let w = if ix == 0 || ix + 1 == axis.n {
                0.5 * axis.step()
            } else {
                axis.step()
            };
            total += w * thetas[ti][ix] * thetas[ti][ix] / denom * rhos[ti][ix];
        }
        per_time.push((ts, 0.5 * total));
    }
    let mut rhs = 0.0;
    for k in 1..per_time.len() {
        let (s0, f0) = per_time[k - 1];
        let (s1, f1) = per_time[k];
        rhs += 0.5 * (f0 + f1) * (s1 - s0);
    }
    rhs
}

/// Divergence bound for the averaged reduction:
/// `1/2 int int |sigma_x^-1 Theta_I|^2 rho dx ds`.
pub fn kl_bound_averaged(p: &SlowFastParams, thetas: &SlowFastThetas, t: f64) -> f64 {
    kl_bound_quadrature(
        &thetas.axis,
        &thetas.times,
        &thetas.theta_i,
        &thetas.rho,
        &thetas.valid,
        p.sigma_x * p.sigma_x,
        t,
    )
}

/// Divergence bound for the fluctuation reduction: the row diffusion
/// `(sigma_x, s_F)` has `|pinv Theta|^2 = Theta^2 / (sigma_x^2 + s_F^2)`.
pub fn kl_bound_fluct(p: &SlowFastParams, thetas: &SlowFastThetas, t: f64) -> f64 {
    let s_f = p.fluctuation_sigma();
    kl_bound_quadrature(
        &thetas.axis,
        &thetas.times,
        &thetas.theta_f,
        &thetas.rho,
        &thetas.valid,
        p.sigma_x * p.sigma_x + s_f * s_f,
        t,
    )
}

/// Leading-order version of the fluctuation bound: the exact denominator is
/// replaced by its first-order expansion
/// `sigma_x^-2 (1 - eps sigma_y^4 / (2 sigma_x^2 gamma^3))`.
pub fn kl_bound_fluct_leading(p: &SlowFastParams, thetas: &SlowFastThetas, t: f64) -> f64 {
    let sx2 = p.sigma_x * p.sigma_x;
    let shrink = 1.0 - p.eps * p.sigma_y.powi(4) / (2.0 * sx2 * p.gamma.powi(3));
    kl_bound_quadrature(
        &thetas.axis,
        &thetas.times,
        &thetas.theta_f,
        &thetas.rho,
        &thetas.valid,
        sx2 / shrink,
        t,
    )
}

/// Grids and sizes of one case-study run.
#[derive(Debug, Clone, Serialize)]
pub struct CaseStudyConfig {
    pub t_final: f64,
    pub n_traj: usize,
    pub n_snapshots: usize,
    pub n_bootstrap: usize,
    pub x_axis: Axis,
    pub y_axis: Axis,
    pub x0_mean: f64,
    pub x0_var: f64,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig {
            t_final: 0.5,
            n_traj: 100_000,
            n_snapshots: 21,
            n_bootstrap: 200,
            x_axis: Axis {
                lo: -4.0,
                hi: 4.5,
                n: 341,
            },
            y_axis: Axis {
                lo: -4.5,
                hi: 4.5,
                n: 181,
            },
            x0_mean: 0.0,
            x0_var: 0.25,
        }
    }
}

/// Everything one comparison run reports.
#[derive(Debug, Clone, Serialize)]
pub struct CaseStudyReport {
    pub params: SlowFastParams,
    pub small_eps_ok: bool,
    pub seed: u64,
    pub dt: f64,
    pub config: CaseStudyConfig,
    pub kde: KdeInfo,
    pub kl_averaged: f64,
    pub kl_fluctuation: f64,
    /// `kl_averaged - kl_fluctuation`
    pub delta: f64,
    /// bootstrap percentile interval (2.5%, 97.5%) of `delta`
    pub delta_ci: [f64; 2],
    /// the fluctuation model is at least as close, within the bootstrap CI
    pub ordering_holds: bool,
    pub verdict: String,
    pub bound_averaged: f64,
    pub bound_fluctuation: f64,
    pub bound_fluctuation_leading: f64,
    /// bound change under halving the snapshot count (relative)
    pub bound_refinement_change: f64,
    pub bound_converged: bool,
    /// `kl_bound_fluct / kl_bound_averaged` on identical Theta and rho inputs
    pub shared_input_bound_ratio: f64,
    /// the closed-form value `sigma_x^2 / (sigma_x^2 + eps sigma_y^4 / (2 gamma^3))`
    pub shared_input_bound_ratio_expected: f64,
    pub reduced_means: [f64; 2],
    pub reduced_vars: [f64; 2],
}

/// A case-study report together with the densities it compared.
#[derive(Debug, Clone)]
pub struct CaseStudyOutput {
    pub report: CaseStudyReport,
    pub mu_hat: GridDensity,
    pub nu_averaged: GridDensity,
    pub nu_fluctuation: GridDensity,
}

/// Simulate the full system, estimate the slow marginal, and compare both
/// reductions: divergences with bootstrap CIs, the theoretical bounds, and
/// the ordering verdict.
pub fn compare_reductions(
    p: &SlowFastParams,
    cfg: &CaseStudyConfig,
    rng: &RngSpec,
) -> Result<CaseStudyOutput> {
    if cfg.n_traj < 1000 {
        return Err(LuqError::InsufficientData(
            "case study needs at least 1000 trajectories".into(),
        ));
    }
    let dt = p.eps / 50.0;
    let t = cfg.t_final;
    let model = full_model(p);

    // initial conditions: X0 ~ N(x0_mean, x0_var), Y0 ~ fast invariant
    let mut init_rng = rng.substream(u64::MAX - 2);
    let y_std = p.fast_variance().sqrt();
    let mut init = vec![0.0; cfg.n_traj * 2];
    for i in 0..cfg.n_traj {
        let zx: f64 = StandardNormal.sample(&mut init_rng);
        let zy: f64 = StandardNormal.sample(&mut init_rng);
        init[2 * i] = cfg.x0_mean + cfg.x0_var.sqrt() * zx;
        init[2 * i + 1] = y_std * zy;
    }

    let snap_times: Vec<f64> = (0..cfg.n_snapshots)
        .map(|k| t * k as f64 / (cfg.n_snapshots - 1) as f64)
        .collect();
    let ens = integrate_em(&model, &init, 0.0, t, dt, rng, &snap_times)?;

    // slow marginal at the final time
    let x_final = ens.column(cfg.n_snapshots - 1, 0);
    let (mu_hat, kde_info) = kde_estimate(&x_final, 1, &[cfg.x_axis], None)?;

    let (m_i, v_i) = reduced_moments(p, Reduced::Averaged, cfg.x0_mean, cfg.x0_var, t);
    let (m_f, v_f) = reduced_moments(p, Reduced::Fluctuation, cfg.x0_mean, cfg.x0_var, t);
    let nu_i = GridDensity::gaussian_1d(cfg.x_axis, m_i, v_i)?;
    let nu_f = GridDensity::gaussian_1d(cfg.x_axis, m_f, v_f)?;
    let kl = catalog("kl", None)?;
    let kl_averaged = divergence(&kl, &mu_hat, &nu_i)?;
    let kl_fluctuation = divergence(&kl, &mu_hat, &nu_f)?;
    if !kl_averaged.is_finite() || !kl_fluctuation.is_finite() {
        return Err(LuqError::InfiniteDivergence(
            "case-study divergence hit the sentinel".into(),
        ));
    }
    let delta = kl_averaged - kl_fluctuation;

    // bootstrap over trajectories, bandwidth held at the original value
    let mut deltas = Vec::with_capacity(cfg.n_bootstrap);
    let mut boot_rng = rng.substream(u64::MAX - 3);
    let n = x_final.len();
    let mut resample = vec![0.0; n];
    for _ in 0..cfg.n_bootstrap {
        for slot in resample.iter_mut() {
            let j = (rand::Rng::random::<u64>(&mut boot_rng) % n as u64) as usize;
            *slot = x_final[j];
        }
        let (mh, _) = kde_estimate(
            &resample,
            1,
            &[cfg.x_axis],
            Some(kde_info.bandwidth.clone()),
        )?;
        let di = divergence(&kl, &mh, &nu_i)?;
        let df = divergence(&kl, &mh, &nu_f)?;
        deltas.push(di - df);
    }
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo_idx = ((cfg.n_bootstrap as f64) * 0.025).floor() as usize;
    let hi_idx = (((cfg.n_bootstrap as f64) * 0.975).floor() as usize).min(cfg.n_bootstrap - 1);
    let delta_ci = [deltas[lo_idx], deltas[hi_idx]];
    let ordering_holds = delta >= 0.0 || delta_ci[1] >= 0.0;

    // joint KDE snapshots -> correction fields -> bounds
    let mut joints = Vec::with_capacity(cfg.n_snapshots);
    for ti in 0..cfg.n_snapshots {
        let (joint, _) = kde_estimate(
            ens.states_at(ti),
            2,
            &[cfg.x_axis, cfg.y_axis],
            None,
        )?;
        joints.push(joint.with_time(ens.times[ti]));
    }
    let thetas = slowfast_thetas(&joints, p)?;
    let bound_averaged = kl_bound_averaged(p, &thetas, t);
    let bound_fluctuation = kl_bound_fluct(p, &thetas, t);
    let bound_fluctuation_leading = kl_bound_fluct_leading(p, &thetas, t);

    // snapshot-refinement sensitivity: halve the snapshot count
    let coarse: Vec<GridDensity> = joints.iter().step_by(2).cloned().collect();
    let thetas_coarse = slowfast_thetas(&coarse, p)?;
    let bound_coarse = kl_bound_averaged(p, &thetas_coarse, t);
    let bound_refinement_change = if bound_averaged != 0.0 {
        ((bound_coarse - bound_averaged) / bound_averaged).abs()
    } else {
        0.0
    };

    // shared-input ratio: both quadratures on the same (Theta_I, rho)
    let s_f = p.fluctuation_sigma();
    let sx2 = p.sigma_x * p.sigma_x;
    let shared_f = kl_bound_quadrature(
        &thetas.axis,
        &thetas.times,
        &thetas.theta_i,
        &thetas.rho,
        &thetas.valid,
        sx2 + s_f * s_f,
        t,
    );
    let shared_input_bound_ratio = if bound_averaged != 0.0 {
        shared_f / bound_averaged
    } else {
        1.0
    };

    let verdict = if ordering_holds {
        "fluctuation model at least as close (within bootstrap CI)".to_string()
    } else {
        "ordering violated: averaged model closer beyond bootstrap CI".to_string()
    };
    let report = CaseStudyReport {
        params: *p,
        small_eps_ok: p.small_eps(),
        seed: rng.master_seed,
        dt,
        config: cfg.clone(),
        kde: kde_info,
        kl_averaged,
        kl_fluctuation,
        delta,
        delta_ci,
        ordering_holds,
        verdict,
        bound_averaged,
        bound_fluctuation,
        bound_fluctuation_leading,
        bound_refinement_change,
        bound_converged: bound_refinement_change < 0.05,
        shared_input_bound_ratio,
        shared_input_bound_ratio_expected: sx2 / (sx2 + s_f * s_f),
        reduced_means: [m_i, m_f],
        reduced_vars: [v_i, v_f],
    };
    Ok(CaseStudyOutput {
        report,
        mu_hat,
        nu_averaged: nu_i,
        nu_fluctuation: nu_f,
    })
}

/// Draw samples from a 1-D Gaussian via a dedicated substream; used by CLI
/// pipelines that need initial ensembles matching a grid density.
pub fn gaussian_samples(mean: f64, var: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean + var.sqrt() * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eps: f64) -> SlowFastParams {
        SlowFastParams::new(1.0, 1.0, 1.0, 1.0, eps).unwrap()
    }

    #[test]
    fn full_model_fields_match_the_equations() {
        let p = params(0.1);
        let model = full_model(&p);
        let mut drift = [0.0; 2];
        model.drift_at(0.0, &[0.0, 1.0], &mut drift);
        assert_eq!(drift, [1.0, -10.0], "(-beta x + y^2, -gamma/eps y)");
        let mut sigma = [0.0; 4];
        model.diffusion_at(0.0, &[0.3, -0.2], &mut sigma);
        assert_eq!(sigma[0], 1.0);
        assert_eq!(sigma[3], 1.0 / 0.1_f64.sqrt());
        assert_eq!(sigma[1], 0.0);
        assert_eq!(sigma[2], 0.0);
    }

    #[test]
    fn reduced_models_have_the_table_coefficients() {
        let p = params(0.04);
        let avg = averaged_model(&p);
        let mut drift = [0.0];
        avg.drift_at(0.0, &[0.0], &mut drift);
        assert_eq!(drift[0], 0.5, "sigma_y^2 / (2 gamma) at x = 0");

        let extra = p.fluctuation_sigma();
        assert!((extra - 0.2 / 2.0_f64.sqrt()).abs() < 1e-12, "{extra}");

        // eps -> 0: the fluctuation diffusion matrix tends to the averaged one
        let p_small = params(1e-9);
        let fl = fluctuation_model(&p_small);
        let mut a = [0.0];
        fl.a_at(0.0, &[0.0], &mut a);
        assert!((a[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fast_invariant_density_moments() {
        let p = params(0.05);
        let axis = Axis::new(-5.0, 5.0, 401).unwrap();
        let pi = fast_invariant_density(&p, axis).unwrap();
        let (mean, var) = pi.moments(0);
        assert!(mean.abs() < 1e-10);
        assert!((var - 0.5).abs() < 1e-8, "sigma_y^2 / (2 gamma) = 0.5");
        assert!((pi.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn small_eps_flag_follows_the_expansion_condition() {
        assert!(params(0.1).small_eps());
        let p = SlowFastParams::new(1.0, 0.5, 0.2, 1.5, 0.9).unwrap();
        // 0.9 * 5.0625 / (2 * 0.04 * 0.125) = 455 > 1
        assert!(!p.small_eps());
    }

    #[test]
    fn stationary_mean_of_both_reductions() {
        let p = params(0.05);
        let (m_i, _) = reduced_moments(&p, Reduced::Averaged, 0.0, 0.25, 40.0);
        let (m_f, _) = reduced_moments(&p, Reduced::Fluctuation, 0.0, 0.25, 40.0);
        assert!((m_i - 0.5).abs() < 1e-12 && (m_f - 0.5).abs() < 1e-12);
    }

    fn slaved_joint(p: &SlowFastParams, ax: Axis, ay: Axis) -> GridDensity {
        // stationary averaged marginal times the fast invariant density
        let m = p.fast_variance() / p.beta;
        let v = p.sigma_x * p.sigma_x / (2.0 * p.beta);
        let pv = p.fast_variance();
        GridDensity::from_fn_2d(ax, ay, move |x, y| {
            (-(x - m) * (x - m) / (2.0 * v)).exp() * (-y * y / (2.0 * pv)).exp()
        })
        .unwrap()
    }

    #[test]
    fn c_coefficients_vanish_on_the_slaved_density() {
        let p = params(0.05);
        let ax = Axis::new(-4.0, 5.0, 361).unwrap();
        let ay = Axis::new(-4.5, 4.5, 181).unwrap();
        let joint = slaved_joint(&p, ax, ay);
        let cc = c_coefficients(&joint, &vec![0.0; ax.n], &p).unwrap();
        for ix in 0..ax.n {
            if cc.valid[ix] {
                assert!(cc.c1[ix].abs() < 1e-6, "C1 at {}", ax.coord(ix));
                assert!(cc.c2[ix].abs() < 1e-6, "C2 at {}", ax.coord(ix));
            }
        }
        // stationary balance: the residual antiderivative stays near zero
        let c3_max = cc.c3_scaled.iter().cloned().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(c3_max < 2e-4, "C3 residual max {c3_max}");
    }

    #[test]
    fn shared_input_bound_ratio_is_algebraic() {
        let p = params(0.04);
        // synthetic theta and rho on a small grid
        let axis = Axis::new(-2.0, 2.0, 41).unwrap();
        let times = vec![0.0, 0.25, 0.5];
        let theta: Vec<Vec<f64>> = times
            .iter()
            .map(|&s| (0..41).map(|i| 0.3 * (i as f64 * 0.1 + s)).collect())
            .collect();
        let rho: Vec<Vec<f64>> = times.iter().map(|_| vec![0.25; 41]).collect();
        let valid = vec![vec![true; 41]; 3];
        let sx2 = 1.0;
        let s_f = p.fluctuation_sigma();
        let b_i = kl_bound_quadrature(&axis, &times, &theta, &rho, &valid, sx2, 0.5);
        let b_f = kl_bound_quadrature(&axis, &times, &theta, &rho, &valid, sx2 + s_f * s_f, 0.5);
        let ratio = b_f / b_i;
        let expected = sx2 / (sx2 + s_f * s_f);
        assert!(
            (ratio - expected).abs() < 1e-10,
            "ratio {ratio} vs {expected}"
        );
        assert!((expected - 1.0 / 1.02).abs() < 1e-12, "1/(1+0.02) for eps = 0.04");
        assert!(b_f < b_i);
    }

    #[test]
    fn reduced_model_fpe_matches_analytic_gaussian() {
        use crate::kolmogorov::{fpe_solve, stable_dt};
        let p = params(0.1);
        let axis = Axis::new(-6.0, 7.0, 521).unwrap();
        let (m0, v0) = (0.0, 0.25);
        let rho0 = GridDensity::gaussian_1d(axis, m0, v0).unwrap();
        let t = 0.5;
        for (which, model) in [
            (Reduced::Averaged, averaged_model(&p)),
            (Reduced::Fluctuation, fluctuation_model(&p)),
        ] {
            let dt = 0.95 * stable_dt(&model, &axis, 0.0).unwrap();
            let sol = fpe_solve(&model, &rho0, 0.0, t, dt, &[t]).unwrap();
            let (m, v) = reduced_moments(&p, which, m0, v0, t);
            let exact = GridDensity::gaussian_1d(axis, m, v).unwrap();
            let l1 = sol.snapshots[0].l1_distance(&exact).unwrap();
            assert!(l1 <= 1e-2, "{which:?}: L1 = {l1}");
        }
    }

    #[test]
    fn zero_theta_gives_zero_bounds() {
        let p = params(0.05);
        let axis = Axis::new(-2.0, 2.0, 41).unwrap();
        let thetas = SlowFastThetas {
            axis,
            times: vec![0.0, 0.5],
            theta_i: vec![vec![0.0; 41]; 2],
            theta_f: vec![vec![0.0; 41]; 2],
            rho: vec![vec![0.25; 41]; 2],
            valid: vec![vec![true; 41]; 2],
        };
        assert_eq!(kl_bound_averaged(&p, &thetas, 0.5), 0.0);
        assert_eq!(kl_bound_fluct(&p, &thetas, 0.5), 0.0);
    }

    #[test]
    fn parameter_validation() {
        assert!(SlowFastParams::new(0.0, 1.0, 1.0, 1.0, 0.1).is_err());
        assert!(SlowFastParams::new(1.0, 1.0, 1.0, 1.0, 1.5).is_err());
    }
}
