//! SDE model specification and ensemble integration.
//!
//! Models carry time-dependent drift and diffusion fields plus the stochastic
//! calculus convention. Stratonovich models are converted to Ito form by the
//! drift correction `c_i = 1/2 sum_{j,k} sigma_jk d_j sigma_ik` before any
//! integration. Ensembles are integrated with Euler-Maruyama; every
//! trajectory draws its Gaussian increments from its own counter-based
//! substream (ChaCha12 keyed by SplitMix64 expansion of
//! `(master_seed, trajectory index)`, normals via the rand_distr ziggurat),
//! so results are bit-reproducible and independent of worker scheduling.

use crate::error::{LuqError, Result};
use crate::grid::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;

/// Stochastic calculus convention of a model's drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calculus {
    Ito,
    Stratonovich,
}

/// Vector field `(t, x) -> out`; diffusion fields write `dim * noise_dim`
/// entries row-major.
pub type FieldFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Drift/diffusion field specification of one SDE.
#[derive(Clone)]
pub struct SdeModel {
    pub dim: usize,
    pub noise_dim: usize,
    pub calculus: Calculus,
    drift: FieldFn,
    diffusion: FieldFn,
    pub tag: String,
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("calculus", &self.calculus)
            .field("tag", &self.tag)
            .finish()
    }
}

impl SdeModel {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        calculus: Calculus,
        drift: FieldFn,
        diffusion: FieldFn,
        tag: impl Into<String>,
    ) -> Self {
        SdeModel {
            dim,
            noise_dim,
            calculus,
            drift,
            diffusion,
            tag: tag.into(),
        }
    }

    /// Scalar model from closures `b(t, x)` and `sigma(t, x)`.
    pub fn scalar(
        calculus: Calculus,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        tag: impl Into<String>,
    ) -> Self {
        SdeModel::new(
            1,
            1,
            calculus,
            Arc::new(move |t, x, out| out[0] = b(t, x[0])),
            Arc::new(move |t, x, out| out[0] = sigma(t, x[0])),
            tag,
        )
    }

    /// Ornstein-Uhlenbeck `dX = -beta (X - mean) dt + sigma dW`.
    pub fn ou(beta: f64, mean: f64, sigma: f64) -> Self {
        SdeModel::scalar(
            Calculus::Ito,
            move |_, x| -beta * (x - mean),
            move |_, _| sigma,
            format!("ou(beta={beta},mean={mean},sigma={sigma})"),
        )
    }

    pub fn drift_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out);
    }

    pub fn diffusion_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out);
    }

    /// Diffusion matrix `a = sigma sigma^T` (row-major `dim x dim`).
    pub fn a_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.dim, self.noise_dim);
        let mut sigma = vec![0.0; d * m];
        self.diffusion_at(t, x, &mut sigma);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..m).map(|k| sigma[i * m + k] * sigma[j * m + k]).sum();
            }
        }
    }

    pub fn require_ito(&self) -> Result<()> {
        if self.calculus == Calculus::Ito {
            Ok(())
        } else {
            Err(LuqError::InvalidParameter(
                "model must be in Ito form (apply strat_to_ito first)".into(),
            ))
        }
    }
}

/// Convert a Stratonovich model to Ito form: the drift gains the correction
/// `c_i = 1/2 sum_{j,k} sigma_jk d_{x_j} sigma_ik`. Jacobians of `sigma` are
/// taken by central differences with relative step 1e-5.
pub fn strat_to_ito(model: &SdeModel) -> Result<SdeModel> {
    if model.calculus == Calculus::Ito {
        return Err(LuqError::InvalidParameter(
            "model is already in Ito form".into(),
        ));
    }
    let (d, m) = (model.dim, model.noise_dim);
    let drift = model.drift.clone();
    let diffusion = model.diffusion.clone();
    let corrected: FieldFn = Arc::new(move |t, x, out| {
        drift(t, x, out);
        let mut sigma = vec![0.0; d * m];
        diffusion(t, x, &mut sigma);
        let mut xp = x.to_vec();
        let mut sp = vec![0.0; d * m];
        let mut sm = vec![0.0; d * m];
        for j in 0..d {
            let h = 1e-5 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            diffusion(t, &xp, &mut sp);
            xp[j] = x[j] - h;
            diffusion(t, &xp, &mut sm);
            xp[j] = x[j];
            for i in 0..d {
                for k in 0..m {
                    let dsig = (sp[i * m + k] - sm[i * m + k]) / (2.0 * h);
                    out[i] += 0.5 * sigma[j * m + k] * dsig;
                }
            }
        }
    });
    Ok(SdeModel {
        dim: d,
        noise_dim: m,
        calculus: Calculus::Ito,
        drift: corrected,
        diffusion: model.diffusion.clone(),
        tag: format!("{}+ito", model.tag),
    })
}

/// Reproducible randomness: one independent substream per trajectory.
#[derive(Debug, Clone, Copy)]
pub struct RngSpec {
    pub master_seed: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        RngSpec { master_seed }
    }

    /// Substream for trajectory `index`: ChaCha12 keyed by SplitMix64
    /// expansion of `(master_seed, index)`.
    pub fn substream(&self, index: u64) -> ChaCha12Rng {
        let mut state = self
            .master_seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha12Rng::from_seed(key)
    }
}

/// A seeded set of trajectory states at recorded times. States are stored
/// flat per time: `states[ti][traj * dim + k]`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub n_traj: usize,
    pub dim: usize,
    pub seed: u64,
    pub model_tag: String,
}

impl Ensemble {
    pub fn states_at(&self, ti: usize) -> &[f64] {
        &self.states[ti]
    }

    /// Coordinate `k` of every trajectory at recorded time `ti`.
    pub fn column(&self, ti: usize, k: usize) -> Vec<f64> {
        self.states[ti]
            .chunks_exact(self.dim)
            .map(|row| row[k])
            .collect()
    }

    /// Sample mean and (unbiased) variance of coordinate `k` at time `ti`.
    pub fn moments(&self, ti: usize, k: usize) -> (f64, f64) {
        let col = self.column(ti, k);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    /// CSV export: `t,traj,x1[,x2]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.dim == 1 {
            writeln!(w, "t,traj,x1")?;
        } else {
            writeln!(w, "t,traj,x1,x2")?;
        }
        for (ti, t) in self.times.iter().enumerate() {
            for traj in 0..self.n_traj {
                let row = &self.states[ti][traj * self.dim..(traj + 1) * self.dim];
                let coords: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{}", t, traj, coords.join(","))?;
            }
        }
        Ok(())
    }
}

/// Euler-Maruyama integration of `init` (flat `n_traj * dim`) from `t0` to
/// `t1`. States are recorded at the step nearest to each requested record
/// time. Deterministic for a given `RngSpec`; parallel over trajectories.
pub fn integrate_em(
    model: &SdeModel,
    init: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    rng: &RngSpec,
    record_times: &[f64],
) -> Result<Ensemble> {
    model.require_ito()?;
    if !(dt > 0.0) || t1 <= t0 {
        return Err(LuqError::InvalidParameter(format!(
            "need dt > 0 and t1 > t0, got dt = {dt}, [{t0}, {t1}]"
        )));
    }
    if !init.len().is_multiple_of(model.dim) || init.is_empty() {
        return Err(LuqError::InvalidParameter(format!(
            "init length {} is not a multiple of dim {}",
            init.len(),
            model.dim
        )));
    }
    let n_traj = init.len() / model.dim;
    let n_steps = (((t1 - t0) / dt) - 1e-9).ceil().max(1.0) as usize;
    let dt_eff = (t1 - t0) / n_steps as f64;
    let record_steps: Vec<usize> = record_times
        .iter()
        .map(|&tr| {
            let k = ((tr - t0) / dt_eff).round();
            (k.max(0.0) as usize).min(n_steps)
        })
        .collect();
    let times: Vec<f64> = record_steps.iter().map(|&k| t0 + k as f64 * dt_eff).collect();
    let (d, m) = (model.dim, model.noise_dim);
    let sqrt_dt = dt_eff.sqrt();

    let per_traj: std::result::Result<Vec<Vec<f64>>, LuqError> = (0..n_traj)
        .into_par_iter()
        .map(|traj| {
            let mut stream = rng.substream(traj as u64);
            let mut x = init[traj * d..(traj + 1) * d].to_vec();
            let mut b = vec![0.0; d];
            let mut sigma = vec![0.0; d * m];
            let mut xi = vec![0.0; m];
            let mut recorded = vec![0.0; record_steps.len() * d];
            let record_at = |k: usize, x: &[f64], rec: &mut Vec<f64>| {
                for (ri, &rk) in record_steps.iter().enumerate() {
                    if rk == k {
                        rec[ri * d..(ri + 1) * d].copy_from_slice(x);
                    }
                }
            };
            record_at(0, &x, &mut recorded);
            for k in 0..n_steps {
                let t = t0 + k as f64 * dt_eff;
                model.drift_at(t, &x, &mut b);
                model.diffusion_at(t, &x, &mut sigma);
                for xik in xi.iter_mut() {
                    *xik = StandardNormal.sample(&mut stream);
                }
                for i in 0..d {
                    let noise: f64 = (0..m).map(|kk| sigma[i * m + kk] * xi[kk]).sum();
                    x[i] += b[i] * dt_eff + noise * sqrt_dt;
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(LuqError::NonFinite(format!(
                        "trajectory {traj} blew up at t = {}",
                        t + dt_eff
                    )));
                }
                record_at(k + 1, &x, &mut recorded);
            }
            Ok(recorded)
        })
        .collect();
    let per_traj = per_traj?;

    // deterministic gather by trajectory index
    let mut states = vec![vec![0.0; n_traj * d]; record_steps.len()];
    for (traj, rec) in per_traj.iter().enumerate() {
        for ri in 0..record_steps.len() {
            states[ri][traj * d..(traj + 1) * d].copy_from_slice(&rec[ri * d..(ri + 1) * d]);
        }
    }
    Ok(Ensemble {
        times,
        states,
        n_traj,
        dim: d,
        seed: rng.master_seed,
        model_tag: model.tag.clone(),
    })
}

/// Apply the generator `L f = sum_i b_i d_i f + 1/2 sum_ij a_ij d2_ij f`
/// nodewise on a uniform grid (second-order central differences, one-sided
/// at the boundary). `f` is given in the same node order as
/// [`crate::grid::GridDensity`].
pub fn generator_apply(model: &SdeModel, axes: &[Axis], f: &[f64], t: f64) -> Result<Vec<f64>> {
    model.require_ito()?;
    if axes.len() != model.dim {
        return Err(LuqError::InvalidParameter(format!(
            "axes ({}) must match model dim ({})",
            axes.len(),
            model.dim
        )));
    }
    if axes.iter().any(|a| a.n < 5) {
        return Err(LuqError::InsufficientData(
            "generator stencil needs at least 5 nodes per axis".into(),
        ));
    }
    match axes.len() {
        1 => {
            let ax = axes[0];
            let h = ax.step();
            let n = ax.n;
            if f.len() != n {
                return Err(LuqError::GridMismatch("f length vs grid".into()));
            }
            let mut out = vec![0.0; n];
            let mut b = [0.0];
            let mut a = [0.0];
            for (i, o) in out.iter_mut().enumerate() {
                let x = [ax.coord(i)];
                model.drift_at(t, &x, &mut b);
                model.a_at(t, &x, &mut a);
                *o = b[0] * d1_1d(f, i, n, h) + 0.5 * a[0] * d2_1d(f, i, n, h);
            }
            Ok(out)
        }
        2 => {
            let (ax, ay) = (axes[0], axes[1]);
            let (nx, ny) = (ax.n, ay.n);
            let (hx, hy) = (ax.step(), ay.step());
            if f.len() != nx * ny {
                return Err(LuqError::GridMismatch("f length vs grid".into()));
            }
            let mut out = vec![0.0; nx * ny];
            let mut b = [0.0; 2];
            let mut a = [0.0; 4];
            let at = |ix: usize, iy: usize| f[ix * ny + iy];
            for ix in 0..nx {
                for iy in 0..ny {
                    let x = [ax.coord(ix), ay.coord(iy)];
                    model.drift_at(t, &x, &mut b);
                    model.a_at(t, &x, &mut a);
                    let fx_row: Vec<f64> = (0..nx).map(|i| at(i, iy)).collect();
                    let fy_row: Vec<f64> = (0..ny).map(|j| at(ix, j)).collect();
                    let dx = d1_1d(&fx_row, ix, nx, hx);
                    let dy = d1_1d(&fy_row, iy, ny, hy);
                    let dxx = d2_1d(&fx_row, ix, nx, hx);
                    let dyy = d2_1d(&fy_row, iy, ny, hy);
                    // mixed derivative, clamped stencil at the boundary
                    let ixm = ix.max(1) - 1;
                    let ixp = (ix + 1).min(nx - 1);
                    let iym = iy.max(1) - 1;
                    let iyp = (iy + 1).min(ny - 1);
                    let dxy = (at(ixp, iyp) - at(ixp, iym) - at(ixm, iyp) + at(ixm, iym))
                        / ((ax.coord(ixp) - ax.coord(ixm)) * (ay.coord(iyp) - ay.coord(iym)));
                    out[ix * ny + iy] =
                        b[0] * dx + b[1] * dy + 0.5 * (a[0] * dxx + a[3] * dyy) + a[1] * dxy;
                }
            }
            Ok(out)
        }
        _ => Err(LuqError::InvalidParameter(
            "generator_apply supports 1-D and 2-D grids".into(),
        )),
    }
}

fn d1_1d(f: &[f64], i: usize, n: usize, h: f64) -> f64 {
    if i == 0 {
        (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    } else if i + 1 == n {
        (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h)
    } else {
        (f[i + 1] - f[i - 1]) / (2.0 * h)
    }
}

fn d2_1d(f: &[f64], i: usize, n: usize, h: f64) -> f64 {
    let j = i.clamp(1, n - 2);
    (f[j + 1] - 2.0 * f[j] + f[j - 1]) / (h * h)
}
