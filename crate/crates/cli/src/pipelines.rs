//! One runner per CLI command. Every pipeline writes its artifacts into the
//! run directory together with an echoed, fully resolved config copy; JSON
//! payloads are byte-reproducible for a fixed config and seed.

use crate::config::{require_block, Command, ExperimentConfig};
use luq_core::bounds::{evaluate_report, Observable};
use luq_core::divergence::divergence;
use luq_core::error::{LuqError, Result};
use luq_core::ftdr::{ftdr_field, pathspace_marginal_bound, FtdrFieldConfig};
use luq_core::grid::{Axis, GridDensity};
use luq_core::kolmogorov::{fpe_solve, FpeSolution};
use luq_core::reconstruction::{divergence_bound_reconstruction, theta_field};
use luq_core::sde::{RngSpec, SdeModel};
use luq_core::slowfast::{compare_reductions, CaseStudyConfig};
use serde::Serialize;
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

/// Inequality-check tolerance gating exit code 4.
pub const MARGIN_TOL: f64 = 1e-3;

/// What a pipeline produced.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub files: Vec<PathBuf>,
    /// `Some(false)` when a theorem check failed beyond tolerance
    pub inequality_ok: Option<bool>,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| LuqError::InvalidParameter(format!("serialize {name}: {e}")))?;
    fs::write(&path, text + "\n")
        .map_err(|e| LuqError::InvalidParameter(format!("write {path:?}: {e}")))?;
    Ok(path)
}

fn write_density_csv(dir: &Path, name: &str, d: &GridDensity) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut buf = Vec::new();
    d.write_csv(&mut buf)
        .map_err(|e| LuqError::InvalidParameter(format!("csv: {e}")))?;
    fs::write(&path, buf)
        .map_err(|e| LuqError::InvalidParameter(format!("write {path:?}: {e}")))?;
    Ok(path)
}

fn wants_csv(config: &ExperimentConfig) -> bool {
    config.output.formats.iter().any(|f| f == "csv")
}

// explicit stability-safe step for a 1-D model on a grid
fn auto_dt(model: &SdeModel, axis: &Axis, t0: f64, dt: Option<f64>) -> f64 {
    if let Some(dt) = dt {
        return dt;
    }
    luq_core::kolmogorov::stable_dt(model, axis, t0)
        .map(|d| 0.95 * d)
        .unwrap_or(1e-3)
}

fn solve_series(
    model: &SdeModel,
    rho0: &GridDensity,
    t0: f64,
    t1: f64,
    dt: Option<f64>,
    snapshots: usize,
) -> Result<(FpeSolution, Vec<f64>)> {
    let times: Vec<f64> = (0..snapshots)
        .map(|k| t0 + (t1 - t0) * k as f64 / (snapshots - 1).max(1) as f64)
        .collect();
    let dt = auto_dt(model, rho0.axis(0), t0, dt);
    let sol = fpe_solve(model, rho0, t0, t1, dt, &times)?;
    Ok((sol, times))
}

/// Execute `command` with `config`, writing artifacts into `out_dir`.
pub fn run_pipeline(
    command: Command,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<PipelineOutcome> {
    if let Some(declared) = config.command {
        if declared != command {
            return Err(LuqError::InvalidParameter(format!(
                "config declares command '{}' but '{}' was invoked",
                declared.name(),
                command.name()
            )));
        }
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| LuqError::InvalidParameter(format!("create {out_dir:?}: {e}")))?;
    let mut files = vec![write_json(out_dir, "config.resolved.json", config)?];

    let outcome = match command {
        Command::Divergence => divergence_pipeline(config, out_dir, &mut files)?,
        Command::Bound => bound_pipeline(config, out_dir, &mut files)?,
        Command::Fpe => fpe_pipeline(config, out_dir, &mut files)?,
        Command::ReconstructBound => reconstruct_pipeline(config, out_dir, &mut files)?,
        Command::FtdrField => ftdr_pipeline(config, out_dir, &mut files)?,
        Command::PathspaceBound => pathspace_pipeline(config, out_dir, &mut files)?,
        Command::CaseStudy => case_study_pipeline(config, out_dir, &mut files)?,
    };
    Ok(PipelineOutcome {
        files,
        inequality_ok: outcome,
    })
}

fn divergence_pipeline(
    config: &ExperimentConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<Option<bool>> {
    let phi = config.phi()?;
    let axis = config.grid_axis()?;
    let mu = require_block(&config.density_mu, "density_mu")?.build(axis)?;
    let nu = require_block(&config.density_nu, "density_nu")?.build(axis)?;
    let value = divergence(&phi, &mu, &nu)?;
    if !value.is_finite() {
        return Err(LuqError::InfiniteDivergence(
            "divergence hit the absolute-continuity sentinel".into(),
        ));
    }
    files.push(write_json(
        dir,
        "divergence.json",
        &json!({
            "phi": phi.name(),
            "divergence": value,
            "resolution": { "grid_lo": axis.lo, "grid_hi": axis.hi, "grid_n": axis.n },
        }),
    )?);
    if wants_csv(config) {
        files.push(write_density_csv(dir, "density_mu.csv", &mu)?);
        files.push(write_density_csv(dir, "density_nu.csv", &nu)?);
    }
    Ok(None)
}

fn bound_pipeline(
    config: &ExperimentConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<Option<bool>> {
    let phi = config.phi()?;
    let axis = config.grid_axis()?;
    let mu = require_block(&config.density_mu, "density_mu")?.build(axis)?;
    let nu = require_block(&config.density_nu, "density_nu")?.build(axis)?;
    let g = Observable::new(require_block(&config.observable, "observable")?.values(axis))?;
    let report = evaluate_report(&phi, &mu, &nu, &g)?;
    files.push(write_json(
        dir,
        "bound_report.json",
        &json!({
            "report": report,
            "resolution": { "grid_lo": axis.lo, "grid_hi": axis.hi, "grid_n": axis.n },
        }),
    )?);
    if wants_csv(config) {
        files.push(write_density_csv(dir, "density_mu.csv", &mu)?);
        files.push(write_density_csv(dir, "density_nu.csv", &nu)?);
    }
    // the sandwich is a theorem check worth gating on
    let ok = match (report.b_plus, report.b_minus) {
        (Some(bp), Some(bm)) => bm - MARGIN_TOL <= report.gap && report.gap <= bp + MARGIN_TOL,
        _ => true,
    };
    Ok(Some(ok))
}

fn fpe_pipeline(
    config: &ExperimentConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<Option<bool>> {
    let axis = config.grid_axis()?;
    let model = require_block(&config.model_mu, "model_mu")?.build()?;
    let rho0 = require_block(&config.density_mu, "density_mu")?.build(axis)?;
    let run = &config.run;
    let (sol, times) = solve_series(&model, &rho0, run.t0, run.t1, run.dt, run.snapshots)?;
    if wants_csv(config) {
        for (k, snap) in sol.snapshots.iter().enumerate() {
            files.push(write_density_csv(dir, &format!("fpe_snapshot_{k:03}.csv"), snap)?);
        }
    }
    files.push(write_json(
        dir,
        "fpe.json",
        &json!({
            "model": model.tag,
            "diagnostics": sol.diagnostics,
            "snapshot_times": times,
            "resolution": {
                "grid_lo": axis.lo, "grid_hi": axis.hi, "grid_n": axis.n,
                "dt": sol.diagnostics.dt,
            },
        }),
    )?);
    Ok(None)
}

fn reconstruct_pipeline(
    config: &ExperimentConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<Option<bool>> {
    let phi = config.phi()?;
    let axis = config.grid_axis()?;
    let model_mu = require_block(&config.model_mu, "model_mu")?.build()?;
    let model_nu = require_block(&config.model_nu, "model_nu")?.build()?;
    let rho0 = require_block(&config.density_mu, "density_mu")?.build(axis)?;
    let run = &config.run;
    if run.snapshots < luq_core::reconstruction::MIN_SNAPSHOTS {
        return Err(LuqError::InvalidParameter(format!(
            "reconstruct-bound needs at least {} snapshots",
            luq_core::reconstruction::MIN_SNAPSHOTS
        )));
    }
    let (mu_sol, _) = solve_series(&model_mu, &rho0, run.t0, run.t1, run.dt, run.snapshots)?;
    let (nu_sol, _) = solve_series(&model_nu, &rho0, run.t0, run.t1, run.dt, run.snapshots)?;
    let theta = theta_field(&model_mu, &model_nu, &mu_sol.snapshots)?;
    let bound = divergence_bound_reconstruction(
        &phi,
        &mu_sol.snapshots,
        &nu_sol.snapshots,
        &theta,
        &model_nu,
        run.t0,
        run.t1,
    )?;
    if wants_csv(config) {
        let path = dir.join("theta_field.csv");
        let mut buf = Vec::new();
        theta
            .write_csv(&mut buf)
            .map_err(|e| LuqError::InvalidParameter(format!("csv: {e}")))?;
        fs::write(&path, buf).map_err(|e| LuqError::InvalidParameter(format!("{e}")))?;
        files.push(path);

        let path = dir.join("bound_integrand.csv");
        let mut buf = Vec::new();
        bound
            .write_integrand_csv(&mut buf)
            .map_err(|e| LuqError::InvalidParameter(format!("csv: {e}")))?;
        fs::write(&path, buf).map_err(|e| LuqError::InvalidParameter(format!("{e}")))?;
        files.push(path);
    }
    files.push(write_json(
        dir,
        "reconstruct_bound.json",
        &json!({
            "phi": phi.name(),
            "bound": bound,
            "resolution": {
                "grid_lo": axis.lo, "grid_hi": axis.hi, "grid_n": axis.n,
                "dt_mu": mu_sol.diagnostics.dt, "dt_nu": nu_sol.diagnostics.dt,
                "snapshots": run.snapshots,
            },
        }),
    )?);
    Ok(Some(bound.margin >= -MARGIN_TOL))
}

fn ftdr_pipeline(
    config: &ExperimentConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<Option<bool>> {
    let phi = config.phi()?;
    let axis = config.grid_axis()?;
    let model = require_block(&config.model_mu, "model_mu")?.build()?;
    let run = &config.run;
    let cfg = FtdrFieldConfig {
        eps_ball: run.eps_ball,
        t0: run.t0,
        t: run.t1,
        n_samples: run.n_samples,
        dt: run.dt.unwrap_or((run.t1 - run.t0) / 1000.0),
        kde_nodes: 201,
    };
    let seeds: Vec<Vec<f64>> = axis.coords().into_iter().map(|x| vec![x]).collect();
    let field = ftdr_field(&model, &phi, &seeds, &cfg, &RngSpec::new(run.seed))?;
    if wants_csv(config) {
        let path = dir.join("ftdr_field.csv");
        let mut buf = Vec::new();
        field
            .write_csv(&mut buf)
            .map_err(|e| LuqError::InvalidParameter(format!("csv: {e}")))?;
        fs::write(&path, buf).map_err(|e| LuqError::InvalidParameter(format!("{e}")))?;
        files.push(path);
    }
    files.push(write_json(
        dir,
        "ftdr_field.json",
        &json!({
            "phi": phi.name(),
            "seeds": field.seeds,
            "values": field.values,
            "resolution": {
                "n_samples": cfg.n_samples, "dt": cfg.dt,
                "kde_nodes": cfg.kde_nodes, "eps_ball": cfg.eps_ball,
                "seed": run.seed,
            },
        }),
    )?);
    Ok(None)
}

fn pathspace_pipeline(
    config: &ExperimentConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<Option<bool>> {
    let phi = config.phi()?;
    let axis = config.grid_axis()?;
    let model_mu = require_block(&config.model_mu, "model_mu")?.build()?;
    let model_nu = require_block(&config.model_nu, "model_nu")?.build()?;
    let rho0 = require_block(&config.density_mu, "density_mu")?.build(axis)?;
    let run = &config.run;
    if run.times.is_empty() {
        return Err(LuqError::InvalidParameter(
            "pathspace-bound needs run.times".into(),
        ));
    }
    let t_n = run
        .times
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(run.t1);
    let dt_mu = auto_dt(&model_mu, &axis, run.t0, run.dt);
    let dt_nu = auto_dt(&model_nu, &axis, run.t0, run.dt);
    let mu_sol = fpe_solve(&model_mu, &rho0, run.t0, t_n, dt_mu, &run.times)?;
    let nu_sol = fpe_solve(&model_nu, &rho0, run.t0, t_n, dt_nu, &run.times)?;
    let bound = pathspace_marginal_bound(
        &phi,
        &mu_sol.snapshots,
        &nu_sol.snapshots,
        &rho0,
        run.t0,
        &run.times,
    )?;
    files.push(write_json(
        dir,
        "pathspace_bound.json",
        &json!({
            "phi": phi.name(),
            "bound": bound,
            "resolution": {
                "grid_lo": axis.lo, "grid_hi": axis.hi, "grid_n": axis.n,
                "dt_mu": dt_mu, "dt_nu": dt_nu,
            },
        }),
    )?);
    Ok(None)
}

fn case_study_pipeline(
    config: &ExperimentConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<Option<bool>> {
    let params = require_block(&config.slowfast, "slowfast")?.build()?;
    let run = &config.run;
    let x_axis = config.grid_axis()?;
    let y_axis = match &config.grid_y {
        Some(g) => g.axis()?,
        None => Axis::new(-4.5, 4.5, 181)?,
    };
    let cfg = CaseStudyConfig {
        t_final: run.t1,
        n_traj: run.n_traj,
        n_snapshots: run.snapshots.clamp(3, 101),
        n_bootstrap: run.n_bootstrap,
        x_axis,
        y_axis,
        x0_mean: 0.0,
        x0_var: 0.25,
    };
    let out = compare_reductions(&params, &cfg, &RngSpec::new(run.seed))?;
    files.push(write_json(dir, "case_study.json", &out.report)?);
    if wants_csv(config) {
        files.push(write_density_csv(dir, "mu_hat.csv", &out.mu_hat)?);
        files.push(write_density_csv(dir, "nu_averaged.csv", &out.nu_averaged)?);
        files.push(write_density_csv(dir, "nu_fluctuation.csv", &out.nu_fluctuation)?);
    }
    Ok(Some(out.report.ordering_holds))
}

/// Model and generator catalog, printed by `luq list-presets`.
pub fn list_presets() -> String {
    let mut text = String::new();
    text.push_str("divergence generators (phi.name, phi.alpha where noted):\n");
    for name in luq_core::phi::catalog_names() {
        text.push_str(&format!("  {name}\n"));
    }
    text.push_str("\nmodel presets ([model_mu] / [model_nu] blocks):\n");
    text.push_str("  ou(beta, mean = 0, sigma)\n");
    text.push_str("  double-well(a, b, sigma)        drift a x - b x^3\n");
    text.push_str("  custom-polynomial(drift, diffusion)   coefficient lists, constant term first\n");
    text.push_str("\ncase-study system ([slowfast] block):\n");
    text.push_str("  slowfast(beta, gamma, sigma_x, sigma_y, eps)\n");
    text.push_str("\ndensities ([density_mu] / [density_nu]): gaussian(mean, var), mixture(means, vars, weights)\n");
    text.push_str("observables ([observable]): coordinate, tanh(scale), polynomial(coeffs)\n");
    text
}
