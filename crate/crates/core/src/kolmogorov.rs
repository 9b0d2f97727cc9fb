//! Forward Kolmogorov (Fokker-Planck) evolution of densities.
//!
//! The 1-D solver is a conservative finite-volume scheme with Chang-Cooper
//! (exponential-fitting) flux weighting at cell faces and zero-flux
//! boundaries: positivity-preserving and mass-conserving by construction.
//! 2-D joints are served by ensembles plus kernel density estimation, which
//! also provides marginalization and conditioning.

use crate::error::{LuqError, Result};
use crate::grid::{Axis, GridDensity};
use crate::sde::SdeModel;
use rayon::prelude::*;
use serde::Serialize;

/// CFL safety factor in `dt <= CFL_FACTOR * dx^2 / max(a)`.
pub const CFL_FACTOR: f64 = 0.4;

/// Courant safety factor in `dt <= COURANT_FACTOR * dx / max|v|` for
/// advection-dominated faces.
pub const COURANT_FACTOR: f64 = 0.4;

/// Largest explicit step the solver accepts for this model on this grid:
/// the diffusive bound `0.4 dx^2 / max(a)` combined with the advective
/// Courant bound `0.4 dx / max|b - d_x(a/2)|`.
pub fn stable_dt(model: &SdeModel, axis: &Axis, t: f64) -> Result<f64> {
    let h = axis.step();
    let mut a_max = 0.0_f64;
    let mut v_max = 0.0_f64;
    let mut a = [0.0];
    let mut ap = [0.0];
    let mut am = [0.0];
    let mut b = [0.0];
    for i in 0..axis.n {
        let x = axis.coord(i);
        model.a_at(t, &[x], &mut a);
        if a[0] < 0.0 {
            return Err(LuqError::InvalidParameter(format!(
                "diffusion a(x) must be nonnegative, got {} at x = {x}",
                a[0]
            )));
        }
        a_max = a_max.max(a[0]);
        model.drift_at(t, &[x], &mut b);
        model.a_at(t, &[x + h], &mut ap);
        model.a_at(t, &[x - h], &mut am);
        let v = b[0] - 0.25 * (ap[0] - am[0]) / h;
        v_max = v_max.max(v.abs());
    }
    let mut dt = f64::INFINITY;
    if a_max > 0.0 {
        dt = dt.min(CFL_FACTOR * h * h / a_max);
    }
    if v_max > 0.0 {
        dt = dt.min(COURANT_FACTOR * h / v_max);
    }
    if dt.is_infinite() {
        dt = 1e-3; // zero fields: any step reproduces the input
    }
    Ok(dt)
}

/// Density snapshots of one forward Kolmogorov solve.
#[derive(Debug, Clone)]
pub struct FpeSolution {
    pub snapshots: Vec<GridDensity>,
    pub model_tag: String,
    pub diagnostics: FpeDiagnostics,
}

/// Solver metadata recorded with every solve.
#[derive(Debug, Clone, Serialize)]
pub struct FpeDiagnostics {
    pub dt: f64,
    pub n_steps: usize,
    pub mass_drift: f64,
    pub min_value: f64,
}

impl FpeSolution {
    pub fn at_time(&self, t: f64) -> Option<&GridDensity> {
        self.snapshots
            .iter()
            .min_by(|a, b| {
                let da = (a.time_tag.unwrap_or(f64::MAX) - t).abs();
                let db = (b.time_tag.unwrap_or(f64::MAX) - t).abs();
                da.partial_cmp(&db).unwrap()
            })
            .filter(|s| (s.time_tag.unwrap_or(f64::MAX) - t).abs() < 1e-9)
    }
}

// Chang-Cooper face coefficients: flux = (D/h) [c_plus rho_left - c_minus rho_right]
// with w = v h / D, c_minus = w / (e^w - 1), c_plus = c_minus + w.
fn cc_coefficients(w: f64) -> (f64, f64) {
    let c_minus = if w.abs() < 1e-8 {
        1.0 - 0.5 * w + w * w / 12.0
    } else {
        w / w.exp_m1()
    };
    (c_minus + w, c_minus)
}

/// Solve the 1-D forward Kolmogorov equation
/// `d_t rho = -d_x(b rho) + 1/2 d_xx(a rho)` for an Ito model with explicit
/// time stepping, recording snapshots at the steps nearest to `record_times`.
///
/// Refuses to run when `dt` violates the explicit stability bound
/// `dt <= 0.4 dx^2 / max(a)` and reports the required step instead.
pub fn fpe_solve(
    model: &SdeModel,
    rho0: &GridDensity,
    t0: f64,
    t1: f64,
    dt: f64,
    record_times: &[f64],
) -> Result<FpeSolution> {
    model.require_ito()?;
    if model.dim != 1 {
        return Err(LuqError::InvalidParameter(
            "fpe_solve handles 1-D models; use ensembles + KDE for joints".into(),
        ));
    }
    if rho0.dims() != 1 {
        return Err(LuqError::InvalidParameter("rho0 must be 1-D".into()));
    }
    if !(dt > 0.0) || t1 <= t0 {
        return Err(LuqError::InvalidParameter(format!(
            "need dt > 0 and t1 > t0, got dt = {dt}, [{t0}, {t1}]"
        )));
    }
    let axis = *rho0.axis(0);
    let n = axis.n;
    let h = axis.step();
    let mut a_buf = [0.0];

    let required = stable_dt(model, &axis, t0)?;
    if dt > required {
        return Err(LuqError::Stability { dt, required });
    }

    let n_steps = (((t1 - t0) / dt) - 1e-9).ceil().max(1.0) as usize;
    let dt_eff = (t1 - t0) / n_steps as f64;
    let record_steps: Vec<usize> = record_times
        .iter()
        .map(|&tr| {
            let k = ((tr - t0) / dt_eff).round();
            (k.max(0.0) as usize).min(n_steps)
        })
        .collect();

    let mut rho: Vec<f64> = rho0.values().to_vec();
    let cell_mass = |r: &[f64]| h * r.iter().sum::<f64>();
    let mass0 = cell_mass(&rho);
    let mut mass_drift = 0.0_f64;
    let mut min_value = 0.0_f64;
    let mut snapshots = Vec::new();
    // snapshots carry the requested record time; the state is at the nearest
    // step, so the tag is off by at most dt/2 and series from solves with
    // different steps stay aligned
    let mut record_if_needed = |k: usize, rho: &[f64]| -> Result<()> {
        for (ri, &rk) in record_steps.iter().enumerate() {
            if rk == k {
                snapshots.push(rho0.with_values(rho.to_vec())?.with_time(record_times[ri]));
            }
        }
        Ok(())
    };
    record_if_needed(0, &rho)?;

    let mut flux = vec![0.0; n + 1]; // face j+1/2 at index j+1; zero-flux ends
    let mut b_buf = [0.0];
    for k in 0..n_steps {
        let t = t0 + k as f64 * dt_eff;
        for j in 0..n - 1 {
            let xf = axis.coord(j) + 0.5 * h;
            model.a_at(t, &[xf], &mut a_buf);
            let dcoef = 0.5 * a_buf[0];
            // conservative drift v = b - d_x D at the face
            model.drift_at(t, &[xf], &mut b_buf);
            let mut a_r = [0.0];
            let mut a_l = [0.0];
            model.a_at(t, &[axis.coord(j + 1)], &mut a_r);
            model.a_at(t, &[axis.coord(j)], &mut a_l);
            let dprime = 0.5 * (a_r[0] - a_l[0]) / h;
            let v = b_buf[0] - dprime;
            flux[j + 1] = if dcoef <= 1e-300 {
                // pure advection: upwind
                if v >= 0.0 {
                    v * rho[j]
                } else {
                    v * rho[j + 1]
                }
            } else {
                let w = v * h / dcoef;
                let (c_plus, c_minus) = cc_coefficients(w);
                dcoef / h * (c_plus * rho[j] - c_minus * rho[j + 1])
            };
        }
        flux[0] = 0.0;
        flux[n] = 0.0;
        for j in 0..n {
            rho[j] -= dt_eff / h * (flux[j + 1] - flux[j]);
        }
        let m = cell_mass(&rho);
        mass_drift = mass_drift.max((m - mass0).abs());
        min_value = min_value.min(rho.iter().cloned().fold(f64::MAX, f64::min));
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(LuqError::NonFinite(format!(
                "fpe solution lost finiteness at t = {}",
                t + dt_eff
            )));
        }
        record_if_needed(k + 1, &rho)?;
    }

    Ok(FpeSolution {
        snapshots,
        model_tag: model.tag.clone(),
        diagnostics: FpeDiagnostics {
            dt: dt_eff,
            n_steps,
            mass_drift,
            min_value,
        },
    })
}

/// Per-axis Silverman bandwidth `sigma_hat (4 / ((d + 2) N))^(1/(d+4))`.
pub fn silverman_bandwidth(samples: &[f64], dim: usize, n: usize) -> f64 {
    let nf = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0).max(1.0);
    let sigma = var.sqrt().max(1e-12);
    let d = dim as f64;
    sigma * (4.0 / ((d + 2.0) * n as f64)).powf(1.0 / (d + 4.0))
}

/// Gaussian kernel density estimate on a grid, renormalized to unit mass.
/// Samples are deposited with linear (cloud-in-cell) weights and smoothed by
/// a separable Gaussian convolution cut at six bandwidths, so a sample
/// sitting exactly on a node reproduces the discretized kernel exactly.
/// Points outside the grid are dropped (callers monitor the dropped
/// fraction).
///
/// `bandwidth`: one entry per axis, or `None` for Silverman's rule.
pub fn kde_estimate(
    states: &[f64],
    dim: usize,
    axes: &[Axis],
    bandwidth: Option<Vec<f64>>,
) -> Result<(GridDensity, KdeInfo)> {
    kde_estimate_with(states, dim, axes, bandwidth, 6.0)
}

/// [`kde_estimate`] with an explicit kernel cutoff in units of the
/// bandwidth; `f64::INFINITY` extends the kernel across the whole grid
/// (needed when density ratios in far tails matter).
pub fn kde_estimate_with(
    states: &[f64],
    dim: usize,
    axes: &[Axis],
    bandwidth: Option<Vec<f64>>,
    kernel_cut: f64,
) -> Result<(GridDensity, KdeInfo)> {
    if dim == 0 || !states.len().is_multiple_of(dim) {
        return Err(LuqError::InvalidParameter(
            "states length must be a multiple of dim".into(),
        ));
    }
    let n = states.len() / dim;
    if n < 100 {
        return Err(LuqError::InsufficientData(format!(
            "kde needs at least 100 samples, got {n}"
        )));
    }
    if axes.len() != dim || dim > 2 {
        return Err(LuqError::InvalidParameter(
            "kde supports 1-D and 2-D grids matching the state dimension".into(),
        ));
    }
    let bw = match bandwidth {
        Some(b) => {
            if b.len() != dim || b.iter().any(|&h| !(h > 0.0)) {
                return Err(LuqError::InvalidParameter(
                    "bandwidth needs one positive entry per axis".into(),
                ));
            }
            b
        }
        None => (0..dim)
            .map(|k| {
                let col: Vec<f64> = (0..n).map(|i| states[i * dim + k]).collect();
                silverman_bandwidth(&col, dim, n)
            })
            .collect(),
    };

    // cloud-in-cell deposit
    let sizes: Vec<usize> = axes.iter().map(|a| a.n).collect();
    let total: usize = sizes.iter().product();
    let mut hist = vec![0.0_f64; total];
    let mut dropped = 0usize;
    'outer: for i in 0..n {
        let mut idx = [0usize; 2];
        let mut frac = [0.0_f64; 2];
        for k in 0..dim {
            let x = states[i * dim + k];
            let ax = &axes[k];
            if x < ax.lo || x > ax.hi || !x.is_finite() {
                dropped += 1;
                continue 'outer;
            }
            let pos = (x - ax.lo) / ax.step();
            let j = (pos.floor() as usize).min(ax.n - 2);
            idx[k] = j;
            frac[k] = pos - j as f64;
        }
        match dim {
            1 => {
                hist[idx[0]] += 1.0 - frac[0];
                hist[idx[0] + 1] += frac[0];
            }
            _ => {
                let ny = sizes[1];
                hist[idx[0] * ny + idx[1]] += (1.0 - frac[0]) * (1.0 - frac[1]);
                hist[idx[0] * ny + idx[1] + 1] += (1.0 - frac[0]) * frac[1];
                hist[(idx[0] + 1) * ny + idx[1]] += frac[0] * (1.0 - frac[1]);
                hist[(idx[0] + 1) * ny + idx[1] + 1] += frac[0] * frac[1];
            }
        }
    }
    if dropped == n {
        return Err(LuqError::InsufficientData(
            "all samples fall outside the kde grid".into(),
        ));
    }

    // separable Gaussian convolution along each axis
    for k in 0..dim {
        let h_axis = axes[k].step();
        let half = if kernel_cut.is_finite() {
            (((kernel_cut * bw[k] / h_axis).ceil() as usize).max(1)).min(axes[k].n - 1)
        } else {
            axes[k].n - 1
        };
        let kernel: Vec<f64> = (0..=half)
            .map(|j| {
                let u = j as f64 * h_axis / bw[k];
                (-0.5 * u * u).exp()
            })
            .collect();
        hist = convolve_axis(&hist, &sizes, k, &kernel);
    }

    let density = GridDensity::build_from_axes(axes, hist)?;
    let info = KdeInfo {
        bandwidth: bw,
        n_samples: n,
        dropped_fraction: dropped as f64 / n as f64,
    };
    Ok((density, info))
}

/// Bandwidths and sample accounting of one KDE call.
#[derive(Debug, Clone, Serialize)]
pub struct KdeInfo {
    pub bandwidth: Vec<f64>,
    pub n_samples: usize,
    pub dropped_fraction: f64,
}

// symmetric FIR convolution along `axis` of a tensor stored x-major
fn convolve_axis(data: &[f64], sizes: &[usize], axis: usize, kernel: &[f64]) -> Vec<f64> {
    match sizes.len() {
        1 => convolve_line(data, kernel),
        _ => {
            let (nx, ny) = (sizes[0], sizes[1]);
            let mut out = vec![0.0; nx * ny];
            if axis == 1 {
                out.par_chunks_mut(ny).enumerate().for_each(|(ix, row)| {
                    let line = &data[ix * ny..(ix + 1) * ny];
                    row.copy_from_slice(&convolve_line(line, kernel));
                });
            } else {
                let cols: Vec<Vec<f64>> = (0..ny)
                    .into_par_iter()
                    .map(|iy| {
                        let line: Vec<f64> = (0..nx).map(|ix| data[ix * ny + iy]).collect();
                        convolve_line(&line, kernel)
                    })
                    .collect();
                for iy in 0..ny {
                    for ix in 0..nx {
                        out[ix * ny + iy] = cols[iy][ix];
                    }
                }
            }
            out
        }
    }
}

fn convolve_line(line: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = line.len();
    let half = kernel.len() - 1;
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = line[i] * kernel[0];
        for j in 1..=half {
            if i >= j {
                acc += line[i - j] * kernel[j];
            }
            if i + j < n {
                acc += line[i + j] * kernel[j];
            }
        }
        *o = acc;
    }
    out
}

impl GridDensity {
    fn build_from_axes(axes: &[Axis], values: Vec<f64>) -> Result<GridDensity> {
        match axes.len() {
            1 => GridDensity::new_1d(axes[0], values),
            2 => GridDensity::new_2d(axes[0], axes[1], values),
            _ => Err(LuqError::InvalidParameter("1-D or 2-D only".into())),
        }
    }
}

/// Integrate a 2-D joint over the dropped axis (trapezoidal), renormalized.
/// `axis = 0` drops x (returns a density in y); `axis = 1` drops y.
pub fn marginalize(joint: &GridDensity, drop_axis: usize) -> Result<GridDensity> {
    if joint.dims() != 2 {
        return Err(LuqError::InvalidParameter(
            "marginalize needs a 2-D density".into(),
        ));
    }
    let (ax, ay) = (*joint.axis(0), *joint.axis(1));
    let ny = ay.n;
    match drop_axis {
        1 => {
            let mut vals = vec![0.0; ax.n];
            for (ix, v) in vals.iter_mut().enumerate() {
                *v = (0..ny)
                    .map(|iy| axis_trapz_weight(&ay, iy) * joint.value(ix * ny + iy))
                    .sum();
            }
            GridDensity::new_1d(ax, vals)
        }
        0 => {
            let mut vals = vec![0.0; ny];
            for (iy, v) in vals.iter_mut().enumerate() {
                *v = (0..ax.n)
                    .map(|ix| axis_trapz_weight(&ax, ix) * joint.value(ix * ny + iy))
                    .sum();
            }
            GridDensity::new_1d(ay, vals)
        }
        _ => Err(LuqError::InvalidParameter("drop_axis must be 0 or 1".into())),
    }
}

fn axis_trapz_weight(axis: &Axis, i: usize) -> f64 {
    let h = axis.step();
    if i == 0 || i + 1 == axis.n {
        0.5 * h
    } else {
        h
    }
}

/// Column-normalized conditional densities `rho(y | x)` of a 2-D joint.
/// Columns whose marginal falls below the floor are `None` (flagged, not
/// failed).
#[derive(Debug, Clone)]
pub struct ConditionalField {
    pub x_axis: Axis,
    pub y_axis: Axis,
    /// one entry per x node; `None` where the x-marginal is below floor
    pub columns: Vec<Option<Vec<f64>>>,
}

/// Condition a 2-D joint on its first coordinate: `rho(x, y) = rho(y|x) rho(x)`.
pub fn conditional(joint: &GridDensity) -> Result<ConditionalField> {
    if joint.dims() != 2 {
        return Err(LuqError::InvalidParameter(
            "conditional needs a 2-D density".into(),
        ));
    }
    let (ax, ay) = (*joint.axis(0), *joint.axis(1));
    let ny = ay.n;
    let floor = 1e-10;
    let columns = (0..ax.n)
        .map(|ix| {
            let col: Vec<f64> = (0..ny).map(|iy| joint.value(ix * ny + iy)).collect();
            let mass: f64 = (0..ny).map(|iy| axis_trapz_weight(&ay, iy) * col[iy]).sum();
            if mass < floor {
                None
            } else {
                Some(col.into_iter().map(|v| v / mass).collect())
            }
        })
        .collect();
    Ok(ConditionalField {
        x_axis: ax,
        y_axis: ay,
        columns,
    })
}

impl ConditionalField {
    /// Trapezoidal integral `int f(y) rho(y|x_i) dy` for column `i`.
    pub fn column_average(&self, ix: usize, f: impl Fn(f64) -> f64) -> Option<f64> {
        let col = self.columns[ix].as_ref()?;
        Some(
            (0..self.y_axis.n)
                .map(|iy| axis_trapz_weight(&self.y_axis, iy) * f(self.y_axis.coord(iy)) * col[iy])
                .sum(),
        )
    }
}

/// Effective 1-D coefficients of a joint model under a conditional field:
/// `b_eff(x) = int b(t, x, y) rho(y|x) dy` and likewise for each diffusion
/// entry of the slow row. Errors when an undefined column is requested.
pub fn effective_coefficients(
    b_joint: impl Fn(f64, f64, f64) -> f64,
    sigma_joint: impl Fn(f64, f64, f64) -> f64,
    cond: &ConditionalField,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nx = cond.x_axis.n;
    let mut b_eff = vec![0.0; nx];
    let mut sigma_eff = vec![0.0; nx];
    for ix in 0..nx {
        let x = cond.x_axis.coord(ix);
        b_eff[ix] = cond
            .column_average(ix, |y| b_joint(t, x, y))
            .ok_or_else(|| {
                LuqError::InsufficientData(format!("conditional undefined at x = {x}"))
            })?;
        sigma_eff[ix] = cond
            .column_average(ix, |y| sigma_joint(t, x, y))
            .ok_or_else(|| {
                LuqError::InsufficientData(format!("conditional undefined at x = {x}"))
            })?;
    }
    Ok((b_eff, sigma_eff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::divergence;
    use crate::phi::catalog;
    use crate::sde::{integrate_em, RngSpec};

    fn ou_exact_var(t: f64, v0: f64, beta: f64, sigma: f64) -> f64 {
        v0 * (-2.0 * beta * t).exp() + sigma * sigma / (2.0 * beta) * (1.0 - (-2.0 * beta * t).exp())
    }

    #[test]
    fn zero_fields_leave_density_unchanged() {
        let model = SdeModel::scalar(crate::sde::Calculus::Ito, |_, _| 0.0, |_, _| 0.0, "null");
        let axis = Axis::new(-5.0, 5.0, 201).unwrap();
        let rho0 = GridDensity::gaussian_1d(axis, 0.0, 1.0).unwrap();
        let sol = fpe_solve(&model, &rho0, 0.0, 0.5, 1e-3, &[0.5]).unwrap();
        let end = &sol.snapshots[0];
        for i in 0..rho0.len() {
            assert!((end.value(i) - rho0.value(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn ou_relaxation_matches_analytic_gaussian() {
        let model = SdeModel::ou(1.0, 0.0, std::f64::consts::SQRT_2);
        let axis = Axis::new(-8.0, 8.0, 801).unwrap();
        let rho0 = GridDensity::gaussian_1d(axis, 0.0, 0.25).unwrap();
        let h = axis.step();
        let dt = 0.4 * h * h / 2.0 * 0.9;
        let sol = fpe_solve(&model, &rho0, 0.0, 1.0, dt, &[1.0]).unwrap();
        let end = &sol.snapshots[0];
        let (_, var) = end.moments(0);
        let v_exact = ou_exact_var(1.0, 0.25, 1.0, std::f64::consts::SQRT_2);
        assert!((v_exact - 0.89849).abs() < 1e-5);
        assert!((var - v_exact).abs() < 3e-3, "var {var} vs {v_exact}");
        let exact = GridDensity::gaussian_1d(axis, 0.0, v_exact).unwrap();
        let l1 = end.l1_distance(&exact).unwrap();
        assert!(l1 <= 1e-2, "L1 error {l1}");
        assert!(sol.diagnostics.mass_drift <= 1e-9, "mass drift");
        assert!(sol.diagnostics.min_value >= -1e-15, "positivity");
    }

    #[test]
    fn refinement_improves_l1_error() {
        let model = SdeModel::ou(1.0, 0.0, std::f64::consts::SQRT_2);
        let mut errors = Vec::new();
        for &n in &[401usize, 801] {
            let axis = Axis::new(-8.0, 8.0, n).unwrap();
            let rho0 = GridDensity::gaussian_1d(axis, 0.0, 0.25).unwrap();
            let h = axis.step();
            let dt = 0.4 * h * h / 2.0 * 0.5;
            let sol = fpe_solve(&model, &rho0, 0.0, 1.0, dt, &[1.0]).unwrap();
            let v_exact = ou_exact_var(1.0, 0.25, 1.0, std::f64::consts::SQRT_2);
            let exact = GridDensity::gaussian_1d(axis, 0.0, v_exact).unwrap();
            errors.push(sol.snapshots[0].l1_distance(&exact).unwrap());
        }
        assert!(
            errors[0] / errors[1] >= 1.7,
            "refinement factor {}",
            errors[0] / errors[1]
        );
    }

    #[test]
    fn stability_violation_reports_required_dt() {
        let model = SdeModel::ou(1.0, 0.0, std::f64::consts::SQRT_2);
        let axis = Axis::new(-8.0, 8.0, 801).unwrap();
        let rho0 = GridDensity::gaussian_1d(axis, 0.0, 0.25).unwrap();
        match fpe_solve(&model, &rho0, 0.0, 1.0, 1e-2, &[1.0]) {
            Err(LuqError::Stability { required, .. }) => {
                assert!(required < 1e-2 && required > 0.0);
            }
            other => panic!("expected stability error, got {other:?}"),
        }
    }

    #[test]
    fn averaged_toy_drift_fixed_point() {
        // drift -beta x + sigma_y^2 / (2 gamma) with unit parameters has its
        // stationary mean at 0.5
        let model = SdeModel::scalar(
            crate::sde::Calculus::Ito,
            |_, x| -x + 0.5,
            |_, _| 1.0,
            "avg",
        );
        let axis = Axis::new(-7.0, 8.0, 751).unwrap();
        let rho0 = GridDensity::gaussian_1d(axis, 0.0, 0.25).unwrap();
        let h = axis.step();
        let dt = 0.4 * h * h * 0.9;
        let sol = fpe_solve(&model, &rho0, 0.0, 8.0, dt, &[8.0]).unwrap();
        let (mean, var) = sol.snapshots[0].moments(0);
        assert!((mean - 0.5).abs() < 1e-3, "stationary mean {mean}");
        assert!((var - 0.5).abs() < 1e-2, "stationary var {var}");
    }

    #[test]
    fn kde_single_point_reproduces_kernel() {
        let axis = Axis::new(-3.0, 3.0, 301).unwrap();
        let states = vec![0.0; 150];
        let h = 0.25;
        let (kde, info) = kde_estimate(&states, 1, &[axis], Some(vec![h])).unwrap();
        let exact = GridDensity::gaussian_1d(axis, 0.0, h * h).unwrap();
        // exact up to the 6-bandwidth kernel cutoff
        let l1 = kde.l1_distance(&exact).unwrap();
        assert!(l1 < 1e-8, "single-kernel identity, L1 = {l1}");
        assert_eq!(info.dropped_fraction, 0.0);
        assert!((kde.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kde_of_gaussian_sample_is_close_in_kl() {
        let model = SdeModel::scalar(crate::sde::Calculus::Ito, |_, _| 0.0, |_, _| 1.0, "bm");
        // Brownian motion at t=1 from zero start is N(0,1)
        let n = 100_000;
        let ens = integrate_em(&model, &vec![0.0; n], 0.0, 1.0, 1e-2, &RngSpec::new(11), &[1.0])
            .unwrap();
        let axis = Axis::new(-8.0, 8.0, 801).unwrap();
        let (kde, _) = kde_estimate(ens.states_at(0), 1, &[axis], None).unwrap();
        let exact = GridDensity::gaussian_1d(axis, 0.0, 1.0).unwrap();
        let kl = catalog("kl", None).unwrap();
        let d = divergence(&kl, &kde, &exact).unwrap();
        assert!(d <= 5e-3, "KL(kde || exact) = {d}");
    }

    #[test]
    fn kde_needs_samples_inside_grid() {
        let axis = Axis::new(0.0, 1.0, 101).unwrap();
        let states = vec![5.0; 200];
        assert!(kde_estimate(&states, 1, &[axis], None).is_err());
        assert!(kde_estimate(&[0.5; 10], 1, &[axis], None).is_err());
    }

    #[test]
    fn marginal_of_product_density_recovers_factor() {
        let ax = Axis::new(-6.0, 6.0, 201).unwrap();
        let ay = Axis::new(-5.0, 5.0, 151).unwrap();
        let joint = GridDensity::from_fn_2d(ax, ay, |x, y| {
            (-(x - 0.5) * (x - 0.5) / 2.0).exp() * (-y * y / 0.8).exp()
        })
        .unwrap();
        let marg = marginalize(&joint, 1).unwrap();
        let exact = GridDensity::gaussian_1d(ax, 0.5, 1.0).unwrap();
        assert!(marg.l1_distance(&exact).unwrap() < 1e-6);
        assert!((marg.mass() - 1.0).abs() < 1e-9);

        let marg_y = marginalize(&joint, 0).unwrap();
        let exact_y = GridDensity::gaussian_1d(ay, 0.0, 0.4).unwrap();
        assert!(marg_y.l1_distance(&exact_y).unwrap() < 1e-6);
    }

    #[test]
    fn conditional_of_correlated_gaussian() {
        let ax = Axis::new(-6.0, 6.0, 241).unwrap();
        let ay = Axis::new(-6.0, 6.0, 241).unwrap();
        let rho_corr = 0.5;
        let joint = GridDensity::from_fn_2d(ax, ay, |x, y| {
            let q = (x * x - 2.0 * rho_corr * x * y + y * y) / (1.0 - rho_corr * rho_corr);
            (-0.5 * q).exp()
        })
        .unwrap();
        let cond = conditional(&joint).unwrap();
        let ix = ax.nearest(1.0);
        let mean = cond.column_average(ix, |y| y).unwrap();
        assert!((mean - 0.5).abs() < 1e-6, "conditional mean {mean}");
        let mass = cond.column_average(ix, |_| 1.0).unwrap();
        assert!((mass - 1.0).abs() < 1e-8);

        // product density: conditional equals the y factor for every x
        let prod = GridDensity::from_fn_2d(ax, ay, |x, y| {
            (-x * x / 2.0).exp() * (-(y - 1.0) * (y - 1.0) / 0.6).exp()
        })
        .unwrap();
        let cond = conditional(&prod).unwrap();
        let m0 = cond.column_average(ax.nearest(0.0), |y| y).unwrap();
        let m2 = cond.column_average(ax.nearest(2.0), |y| y).unwrap();
        assert!((m0 - 1.0).abs() < 1e-6 && (m2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn effective_coefficients_reduce_correctly() {
        let ax = Axis::new(-3.0, 3.0, 121).unwrap();
        let ay = Axis::new(-4.0, 4.0, 161).unwrap();
        // slaved joint: rho(x) * N(0, 0.5) in y (the toy fast invariant with
        // unit parameters)
        let joint = GridDensity::from_fn_2d(ax, ay, |x, y| {
            (-x * x / 2.0).exp() * (-y * y).exp()
        })
        .unwrap();
        let cond = conditional(&joint).unwrap();
        // b(t, x, y) = -x + y^2: averaged drift -x + 0.5
        let (b_eff, s_eff) = effective_coefficients(
            |_, x, y| -x + y * y,
            |_, _, _| 1.0,
            &cond,
            0.0,
        )
        .unwrap();
        for (ix, &b) in b_eff.iter().enumerate() {
            let x = ax.coord(ix);
            assert!((b - (-x + 0.5)).abs() < 1e-4, "x = {x}: {b}");
        }
        assert!(s_eff.iter().all(|&s| (s - 1.0).abs() < 1e-10));

        // b independent of y passes through
        let (b_id, _) = effective_coefficients(|_, x, _| -2.0 * x, |_, _, _| 1.0, &cond, 0.0)
            .unwrap();
        for (ix, &b) in b_id.iter().enumerate() {
            assert!((b + 2.0 * ax.coord(ix)).abs() < 1e-10);
        }

        // requesting a column where the marginal is below floor is an error
        let wide = Axis::new(-30.0, 30.0, 241).unwrap();
        let sparse = GridDensity::from_fn_2d(wide, ay, |x, y| {
            (-x * x / 2.0).exp() * (-y * y).exp()
        })
        .unwrap();
        let cond = conditional(&sparse).unwrap();
        assert!(cond.columns[0].is_none(), "far tail column undefined");
        assert!(matches!(
            effective_coefficients(|_, x, _| -x, |_, _, _| 1.0, &cond, 0.0),
            Err(LuqError::InsufficientData(_))
        ));
    }

    #[test]
    fn ensemble_marginal_matches_effective_coefficient_fpe() {
        // separable 2-D system: the slow coefficients are y-independent, so
        // the effective-coefficient route must reproduce the slow marginal
        use std::sync::Arc;
        let model = SdeModel::new(
            2,
            2,
            crate::sde::Calculus::Ito,
            Arc::new(|_t: f64, z: &[f64], out: &mut [f64]| {
                out[0] = -z[0];
                out[1] = -2.0 * z[1];
            }),
            Arc::new(|_t: f64, _z: &[f64], out: &mut [f64]| {
                out[0] = std::f64::consts::SQRT_2;
                out[1] = 0.0;
                out[2] = 0.0;
                out[3] = 1.0;
            }),
            "separable",
        );
        let n = 60_000;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = RngSpec::new(5).substream(u64::MAX);
        let mut init = vec![0.0; 2 * n];
        for i in 0..n {
            let zx: f64 = StandardNormal.sample(&mut rng);
            let zy: f64 = StandardNormal.sample(&mut rng);
            init[2 * i] = 0.5 * zx;
            init[2 * i + 1] = 0.5 * zy;
        }
        let t = 0.5;
        let ens = integrate_em(&model, &init, 0.0, t, 1e-2, &RngSpec::new(6), &[t]).unwrap();
        let ax = Axis::new(-8.0, 8.0, 241).unwrap();
        let ay = Axis::new(-4.0, 4.0, 161).unwrap();
        let (joint, _) = kde_estimate(ens.states_at(0), 2, &[ax, ay], None).unwrap();
        let mu_x = marginalize(&joint, 1).unwrap();

        // effective slow coefficients from the estimated conditional; the
        // base fields stand in on the (negligible-mass) undefined columns
        let cond = conditional(&joint).unwrap();
        let mut b_eff = Vec::with_capacity(ax.n);
        let mut s_eff = Vec::with_capacity(ax.n);
        for ix in 0..ax.n {
            let x = ax.coord(ix);
            b_eff.push(cond.column_average(ix, |_| -x).unwrap_or(-x));
            s_eff.push(
                cond.column_average(ix, |_| std::f64::consts::SQRT_2)
                    .unwrap_or(std::f64::consts::SQRT_2),
            );
        }
        let interp = move |table: Vec<f64>, axis: Axis| {
            move |x: f64| {
                let pos = ((x - axis.lo) / axis.step()).clamp(0.0, (axis.n - 1) as f64);
                let j = (pos.floor() as usize).min(axis.n - 2);
                let f = pos - j as f64;
                table[j] * (1.0 - f) + table[j + 1] * f
            }
        };
        let b_fn = interp(b_eff, ax);
        let s_fn = interp(s_eff, ax);
        let eff_model = SdeModel::scalar(
            crate::sde::Calculus::Ito,
            move |_, x| b_fn(x),
            move |_, x| s_fn(x),
            "effective",
        );
        let rho0 = GridDensity::gaussian_1d(ax, 0.0, 0.25).unwrap();
        let dt = 0.95 * stable_dt(&eff_model, &ax, 0.0).unwrap();
        let sol = fpe_solve(&eff_model, &rho0, 0.0, t, dt, &[t]).unwrap();
        let l1 = mu_x.l1_distance(&sol.snapshots[0]).unwrap();
        assert!(l1 <= 3e-2, "marginal vs effective-coefficient FPE: L1 = {l1}");
    }

    #[test]
    fn fpe_matches_ensemble_kde_for_ou() {
        let model = SdeModel::ou(1.0, 0.0, std::f64::consts::SQRT_2);
        let axis = Axis::new(-8.0, 8.0, 801).unwrap();
        let rho0 = GridDensity::gaussian_1d(axis, 0.0, 0.25).unwrap();
        let h = axis.step();
        let dt = 0.4 * h * h / 2.0 * 0.9;
        let sol = fpe_solve(&model, &rho0, 0.0, 1.0, dt, &[1.0]).unwrap();

        // matching ensemble: sample the initial Gaussian via its own stream
        let n = 100_000;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = RngSpec::new(123).substream(u64::MAX);
        let init: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * z
            })
            .collect();
        let ens = integrate_em(&model, &init, 0.0, 1.0, 1e-3, &RngSpec::new(77), &[1.0]).unwrap();
        let (kde, _) = kde_estimate(ens.states_at(0), 1, &[axis], None).unwrap();
        let l1 = sol.snapshots[0].l1_distance(&kde).unwrap();
        assert!(l1 <= 2e-2, "fpe vs ensemble kde L1 = {l1}");
    }
}
