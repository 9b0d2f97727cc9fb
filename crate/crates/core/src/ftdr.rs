//! Finite-time divergence rates and the bounds built from them.
//!
//! The phi-FTDR between two snapshots of one Markov evolution is the
//! divergence scaled by the elapsed time, `D_phi(mu_t || mu_t0) / |t - t0|`.
//! Fields of FTDR values over seed points are computed from the centred flow
//! `v -> phi_{t,t0}(x + v) - phi_{t,t0}(x)` started from a uniform ball:
//! both trajectories of each pair share their Wiener increments, and the
//! same increment substreams are reused across seed points so that spatial
//! structure in the field is not masked by sampling noise.

use crate::divergence::divergence;
use crate::error::{LuqError, Result};
use crate::grid::{Axis, GridDensity};
use crate::kolmogorov::{kde_estimate_with, silverman_bandwidth, KdeInfo};
use crate::phi::PhiFunction;
use crate::sde::{integrate_em, RngSpec, SdeModel};
use rand::Rng;
use serde::Serialize;
use std::io::Write;
use std::sync::Arc;

/// Finite-time divergence rate `D_phi(mu_t || mu_t0) / |t - t0|`.
pub fn ftdr(
    phi: &PhiFunction,
    mu_t: &GridDensity,
    mu_t0: &GridDensity,
    t: f64,
    t0: f64,
) -> Result<f64> {
    if t == t0 {
        return Err(LuqError::InvalidParameter(
            "ftdr needs t != t0".into(),
        ));
    }
    Ok(divergence(phi, mu_t, mu_t0)? / (t - t0).abs())
}

/// Outcome of one FTDR difference-bound check
/// `D(mu_t || nu_t) <= | D(mu_t || mu_t0) - D(nu_t || mu_t0) |`
/// (the shared `1/|t - t0|` factors cancel, so raw divergences are compared).
#[derive(Debug, Clone, Serialize)]
pub struct FtdrCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// false when any of the three divergences hit the infinite sentinel;
    /// the check is then reported inconclusive rather than failed.
    pub conclusive: bool,
}

/// Evaluate the FTDR difference bound for marginals sharing the initial
/// density `mu_t0`. A violation shows up as `margin < 0` and is the caller's
/// finding to report, never clipped here.
pub fn ftdr_bound_check(
    phi: &PhiFunction,
    mu_t: &GridDensity,
    nu_t: &GridDensity,
    mu_t0: &GridDensity,
) -> Result<FtdrCheck> {
    let lhs = divergence(phi, mu_t, nu_t)?;
    let d_mu = divergence(phi, mu_t, mu_t0)?;
    let d_nu = divergence(phi, nu_t, mu_t0)?;
    if !lhs.is_finite() || !d_mu.is_finite() || !d_nu.is_finite() {
        return Ok(FtdrCheck {
            lhs,
            rhs: f64::NAN,
            margin: f64::NAN,
            conclusive: false,
        });
    }
    let rhs = (d_mu - d_nu).abs();
    Ok(FtdrCheck {
        lhs,
        rhs,
        margin: rhs - lhs,
        conclusive: true,
    })
}

/// Configuration of a centred-flow FTDR field evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct FtdrFieldConfig {
    pub eps_ball: f64,
    pub t0: f64,
    pub t: f64,
    pub n_samples: usize,
    pub dt: f64,
    /// nodes per axis of the per-seed KDE grid
    pub kde_nodes: usize,
}

impl FtdrFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_ball > 0.0) {
            return Err(LuqError::InvalidParameter("eps_ball must be > 0".into()));
        }
        if self.n_samples < 1000 {
            return Err(LuqError::InsufficientData(
                "ftdr_field needs at least 1000 samples per seed".into(),
            ));
        }
        if !(self.t > self.t0) || !(self.dt > 0.0) {
            return Err(LuqError::InvalidParameter(
                "ftdr_field needs t > t0 and dt > 0".into(),
            ));
        }
        if self.kde_nodes < 51 {
            return Err(LuqError::InvalidParameter(
                "kde grid needs at least 51 nodes per axis".into(),
            ));
        }
        Ok(())
    }
}

/// FTDR values over a set of seed points.
#[derive(Debug, Clone)]
pub struct FtdrField {
    pub seeds: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub phi: String,
    pub config: FtdrFieldConfig,
}

impl FtdrField {
    /// CSV export: `x[,y],ftdr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self.seeds.first().map_or(1, |s| s.len());
        if dim == 1 {
            writeln!(w, "x,ftdr")?;
        } else {
            writeln!(w, "x,y,ftdr")?;
        }
        for (seed, v) in self.seeds.iter().zip(&self.values) {
            let coords: Vec<String> = seed.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{}", coords.join(","), v)?;
        }
        Ok(())
    }
}

/// Per-seed diagnostics, mainly for oracle tests.
#[derive(Debug, Clone)]
pub struct FtdrSeedDetail {
    pub axes: Vec<Axis>,
    pub initial_kde: KdeInfo,
    pub evolved_kde: KdeInfo,
    pub displacements: Vec<f64>,
}

// Pair system (z, z_ref) sharing the same noise columns: the centred flow is
// z(t) - z_ref(t) evaluated pathwise.
fn paired_model(model: &SdeModel) -> SdeModel {
    let d = model.dim;
    let m = model.noise_dim;
    let inner = model.clone();
    let inner2 = model.clone();
    SdeModel::new(
        2 * d,
        m,
        crate::sde::Calculus::Ito,
        Arc::new(move |t, z, out| {
            inner.drift_at(t, &z[..d], &mut out[..d]);
            inner.drift_at(t, &z[d..], &mut out[d..]);
        }),
        Arc::new(move |t, z, out| {
            inner2.diffusion_at(t, &z[..d], &mut out[..d * m]);
            inner2.diffusion_at(t, &z[d..], &mut out[d * m..]);
        }),
        format!("paired({})", model.tag),
    )
}

fn sample_ball(dim: usize, eps: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    match dim {
        1 => {
            for _ in 0..n {
                out.push(eps * (2.0 * rng.random::<f64>() - 1.0));
            }
        }
        _ => {
            for _ in 0..n {
                let r = eps * rng.random::<f64>().sqrt();
                let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                out.push(r * theta.cos());
                out.push(r * theta.sin());
            }
        }
    }
    out
}

fn cloud_axes(initial: &[f64], evolved: &[f64], dim: usize, nodes: usize) -> Result<Vec<Axis>> {
    let n = evolved.len() / dim;
    let mut axes = Vec::with_capacity(dim);
    for k in 0..dim {
        let col = |data: &[f64], i: usize| data[i * dim + k];
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        let mut mean = 0.0;
        for i in 0..n {
            let u = col(evolved, i);
            lo = lo.min(u);
            hi = hi.max(u);
            mean += u;
        }
        mean /= n as f64;
        let var = (0..n)
            .map(|i| {
                let d = col(evolved, i) - mean;
                d * d
            })
            .sum::<f64>()
            / (n as f64 - 1.0);
        let std = var.sqrt();
        // cover the evolved cloud out to 6 standard deviations and never
        // less than the initial ball
        lo = lo.min(mean - 6.0 * std);
        hi = hi.max(mean + 6.0 * std);
        for i in 0..initial.len() / dim {
            lo = lo.min(col(initial, i));
            hi = hi.max(col(initial, i));
        }
        let pad = 0.05 * (hi - lo).max(1e-8);
        axes.push(Axis::new(lo - pad, hi + pad, nodes)?);
    }
    Ok(axes)
}

/// FTDR of the centred flow at one seed point, with diagnostics.
pub fn centered_flow_ftdr(
    model: &SdeModel,
    phi: &PhiFunction,
    seed: &[f64],
    config: &FtdrFieldConfig,
    rng: &RngSpec,
) -> Result<(f64, FtdrSeedDetail)> {
    model.require_ito()?;
    config.validate()?;
    let d = model.dim;
    if seed.len() != d || d > 2 {
        return Err(LuqError::InvalidParameter(
            "seed dimension must match the model (1-D or 2-D)".into(),
        ));
    }
    let n = config.n_samples;
    // ball offsets from a dedicated substream, shared across seeds
    let mut ball_rng = rng.substream(u64::MAX - 1);
    let offsets = sample_ball(d, config.eps_ball, n, &mut ball_rng);

    let pair = paired_model(model);
    let mut init = vec![0.0; n * 2 * d];
    for i in 0..n {
        for k in 0..d {
            init[i * 2 * d + k] = seed[k] + offsets[i * d + k];
            init[i * 2 * d + d + k] = seed[k];
        }
    }
    let ens = integrate_em(&pair, &init, config.t0, config.t, config.dt, rng, &[config.t])?;
    let end = ens.states_at(0);
    let mut displacements = vec![0.0; n * d];
    for i in 0..n {
        for k in 0..d {
            displacements[i * d + k] = end[i * 2 * d + k] - end[i * 2 * d + d + k];
        }
    }

    let axes = cloud_axes(&offsets, &displacements, d, config.kde_nodes)?;
    // one bandwidth per axis, shared by both clouds (the larger Silverman
    // value), and kernels extended across the whole local grid: the density
    // ratio in the tails is what the divergence integrates, so the reference
    // must stay positive wherever the evolved cloud carries mass
    let shared_bw: Vec<f64> = (0..d)
        .map(|k| {
            let col = |data: &[f64], i: usize| data[i * d + k];
            let a: Vec<f64> = (0..n).map(|i| col(&offsets, i)).collect();
            let b: Vec<f64> = (0..n).map(|i| col(&displacements, i)).collect();
            silverman_bandwidth(&a, d, n).max(silverman_bandwidth(&b, d, n))
        })
        .collect();
    let (initial_density, initial_info) =
        kde_estimate_with(&offsets, d, &axes, Some(shared_bw.clone()), f64::INFINITY)?;
    let (evolved_density, evolved_info) =
        kde_estimate_with(&displacements, d, &axes, Some(shared_bw), f64::INFINITY)?;
    let dvalue = divergence(phi, &evolved_density, &initial_density)?;
    if !dvalue.is_finite() {
        return Err(LuqError::InfiniteDivergence(
            "centred-flow divergence hit the absolute-continuity sentinel \
             (kde grids degenerate)"
                .into(),
        ));
    }
    let rate = dvalue / (config.t - config.t0).abs();
    Ok((
        rate,
        FtdrSeedDetail {
            axes,
            initial_kde: initial_info,
            evolved_kde: evolved_info,
            displacements,
        },
    ))
}

/// Evaluate the centred-flow FTDR field over seed points. Seeds share the
/// same increment substreams, so for linear dynamics (whose centred flow is
/// seed-independent) the field is constant to machine precision.
pub fn ftdr_field(
    model: &SdeModel,
    phi: &PhiFunction,
    seeds: &[Vec<f64>],
    config: &FtdrFieldConfig,
    rng: &RngSpec,
) -> Result<FtdrField> {
    let mut values = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let (v, _) = centered_flow_ftdr(model, phi, seed, config, rng)?;
        values.push(v);
    }
    Ok(FtdrField {
        seeds: seeds.to_vec(),
        values,
        phi: phi.name(),
        config: config.clone(),
    })
}

/// One term of the pathspace marginal bound.
#[derive(Debug, Clone, Serialize)]
pub struct PathspaceTerm {
    pub t_i: f64,
    pub d_mu: f64,
    pub d_nu: f64,
    /// `|D^{t_n - t_0}(mu_ti || mu_t0) - D^{t_n - t_0}(nu_ti || mu_t0)|`
    pub rate_term: f64,
    /// `(|t_n - t_i| / |t_n - t_0|) |D^{t_i - t_0}(..) - D^{t_i - t_0}(..)|`
    pub weighted_term: f64,
}

/// The pathspace finite-marginal bound.
#[derive(Debug, Clone, Serialize)]
pub struct PathspaceBound {
    pub value: f64,
    pub terms: Vec<PathspaceTerm>,
}

/// Evaluate the finite-marginal pathspace bound
///
/// ```text
/// sum_i | D^{tn-t0}(mu_ti || mu_t0) - D^{tn-t0}(nu_ti || mu_t0) |
///   + sum_i (|tn-ti| / |tn-t0|) | D^{ti-t0}(mu_ti || mu_t0) - D^{ti-t0}(nu_ti || mu_t0) |
/// ```
///
/// for marginals `mus[i]`, `nus[i]` at ordered times `t0 < t_1 <= .. <= t_n`
/// with the common initial density `mu_t0`.
pub fn pathspace_marginal_bound(
    phi: &PhiFunction,
    mus: &[GridDensity],
    nus: &[GridDensity],
    mu_t0: &GridDensity,
    t0: f64,
    times: &[f64],
) -> Result<PathspaceBound> {
    if mus.len() != nus.len() || mus.len() != times.len() || times.is_empty() {
        return Err(LuqError::InvalidParameter(
            "need equally many marginals and times, at least one".into(),
        ));
    }
    for w in times.windows(2) {
        if w[1] < w[0] {
            return Err(LuqError::InvalidParameter(
                "times must be nondecreasing".into(),
            ));
        }
    }
    if times[0] <= t0 {
        return Err(LuqError::InvalidParameter("need t_1 > t_0".into()));
    }
    let t_n = *times.last().unwrap();
    let span = t_n - t0;
    let mut terms = Vec::with_capacity(times.len());
    let mut value = 0.0;
    for i in 0..times.len() {
        let d_mu = divergence(phi, &mus[i], mu_t0)?;
        let d_nu = divergence(phi, &nus[i], mu_t0)?;
        if !d_mu.is_finite() || !d_nu.is_finite() {
            return Err(LuqError::InfiniteDivergence(format!(
                "divergence sentinel at t = {}",
                times[i]
            )));
        }
        let diff = (d_mu - d_nu).abs();
        let rate_term = diff / span;
        let weighted_term = ((t_n - times[i]) / span) * diff / (times[i] - t0);
        value += rate_term + weighted_term;
        terms.push(PathspaceTerm {
            t_i: times[i],
            d_mu,
            d_nu,
            rate_term,
            weighted_term,
        });
    }
    Ok(PathspaceBound { value, terms })
}
