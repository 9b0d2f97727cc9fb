//! Observable-error information inequalities.
//!
//! For a pair of measures and an observable `g`, the expectation gap
//! `E^mu[g] - E^nu[g]` is sandwiched between
//!
//! ```text
//! B_- = -inf_{l > 0} { (G(-l) + D) / l },   B_+ = inf_{l > 0} { (G(l) + D) / l },
//! ```
//!
//! where `G(l) = int phi*(l (g - E^nu[g])) dnu` is the conjugate cumulant and
//! `D = D_phi(mu || nu)`. Both bounds vanish exactly when `mu = nu` or `g` is
//! constant. The representation route recovers the same values by inverting
//! `H(l) = -G(l) + l G'(l)` with a scalar pseudo-inverse, and the
//! linearization `sqrt(2 d2phi*(0) Var_nu(g) D)` is the small-divergence
//! leading term. Chapman-Robbins and the Csiszar total-variation bound are
//! provided for comparison.

use crate::divergence::{divergence, divergence_discrete, DiscreteDistribution};
use crate::error::{LuqError, Result};
use crate::grid::GridDensity;
use crate::phi::{catalog, PhiFunction};
use serde::Serialize;

/// Variance threshold below which an observable counts as constant.
pub const CONST_OBS_TOL: f64 = 1e-14;

/// Search domain for the minimizing `lambda`.
pub const LAMBDA_LO: f64 = 1e-8;
pub const LAMBDA_HI: f64 = 1e8;

/// An observable cached nodewise on the grid of the paired density.
#[derive(Debug, Clone)]
pub struct Observable {
    values: Vec<f64>,
}

impl Observable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LuqError::InvalidParameter(
                "observable must be finite at every node".into(),
            ));
        }
        Ok(Observable { values })
    }

    pub fn from_fn(grid: &GridDensity, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut coords = [0.0_f64; 2];
        let values = (0..grid.len())
            .map(|i| {
                grid.node_coords(i, &mut coords);
                f(&coords[..grid.dims()])
            })
            .collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean_under(&self, rho: &GridDensity) -> f64 {
        rho.expectation(&self.values)
    }

    pub fn variance_under(&self, rho: &GridDensity) -> f64 {
        let m = self.mean_under(rho);
        let sq: Vec<f64> = self.values.iter().map(|&g| (g - m) * (g - m)).collect();
        rho.expectation(&sq)
    }
}

/// Which of the two bounds is being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundSign {
    Plus,
    Minus,
}

/// Solver diagnostics attached to reports.
#[derive(Debug, Clone, Serialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub bracket: [f64; 2],
}

/// The evaluated quantities of one comparison.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub phi: String,
    pub divergence: f64,
    pub gap: f64,
    /// `None` when the divergence is infinite (bounds unavailable).
    pub b_plus: Option<f64>,
    pub b_minus: Option<f64>,
    pub b_linearized: Option<f64>,
    pub lambda_star_plus: Option<f64>,
    pub lambda_star_minus: Option<f64>,
    pub cr_bound: Option<f64>,
    pub tv_bound: Option<f64>,
    pub diagnostics: Option<SolverDiagnostics>,
}

// Probability weights paired with observable values: the common core for
// grid and discrete supports.
struct Support<'a> {
    prob: Vec<f64>,
    g: &'a [f64],
}

impl<'a> Support<'a> {
    fn from_grid(nu: &GridDensity, g: &'a [f64]) -> Result<Self> {
        if g.len() != nu.len() {
            return Err(LuqError::GridMismatch(format!(
                "observable length {} vs grid size {}",
                g.len(),
                nu.len()
            )));
        }
        let prob = (0..nu.len())
            .map(|i| nu.quad_weight(i) * nu.value(i))
            .collect();
        Ok(Support { prob, g })
    }

    fn from_discrete(nu: &DiscreteDistribution, g: &'a [f64]) -> Result<Self> {
        if g.len() != nu.len() {
            return Err(LuqError::GridMismatch(format!(
                "observable length {} vs support size {}",
                g.len(),
                nu.len()
            )));
        }
        Ok(Support {
            prob: nu.weights().to_vec(),
            g,
        })
    }

    fn mean(&self) -> f64 {
        self.prob.iter().zip(self.g).map(|(&w, &g)| w * g).sum()
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        self.prob
            .iter()
            .zip(self.g)
            .map(|(&w, &g)| w * (g - m) * (g - m))
            .sum()
    }

    /// `G(lambda) = sum_i w_i phi*(lambda (g_i - E[g]))`.
    fn cumulant(&self, phi: &PhiFunction, lambda: f64) -> f64 {
        if lambda == 0.0 || self.variance() < CONST_OBS_TOL {
            return 0.0;
        }
        let m = self.mean();
        self.prob
            .iter()
            .zip(self.g)
            .map(|(&w, &g)| {
                if w == 0.0 {
                    0.0
                } else {
                    w * phi.conj(lambda * (g - m))
                }
            })
            .sum()
    }

    /// `G'(lambda) = sum_i w_i (g_i - E[g]) dphi*(lambda (g_i - E[g]))`,
    /// using the catalog's conjugate derivative. Difference quotients break
    /// down near a conjugate-domain edge (the Hellinger family), where the
    /// representation formula needs `G'` right next to the blow-up.
    fn cumulant_derivative(&self, phi: &PhiFunction, lambda: f64) -> f64 {
        if self.variance() < CONST_OBS_TOL {
            return 0.0;
        }
        let m = self.mean();
        self.prob
            .iter()
            .zip(self.g)
            .map(|(&w, &g)| {
                if w == 0.0 {
                    0.0
                } else {
                    w * (g - m) * phi.dconj(lambda * (g - m))
                }
            })
            .sum()
    }
}

/// Conjugate cumulant `G(lambda)` of an observable under a grid density.
/// `G(0) = 0` exactly; capability error for generators without a smooth
/// conjugate.
pub fn cumulant_g(
    phi: &PhiFunction,
    nu: &GridDensity,
    g: &Observable,
    lambda: f64,
) -> Result<f64> {
    phi.require_smooth_conj()?;
    Ok(Support::from_grid(nu, g.values())?.cumulant(phi, lambda))
}

/// Discrete-support counterpart of [`cumulant_g`].
pub fn cumulant_g_discrete(
    phi: &PhiFunction,
    nu: &DiscreteDistribution,
    g: &[f64],
    lambda: f64,
) -> Result<f64> {
    phi.require_smooth_conj()?;
    Ok(Support::from_discrete(nu, g)?.cumulant(phi, lambda))
}

struct MinResult {
    value: f64,
    lambda: f64,
    iterations: usize,
}

// Minimize the bound objective (G(sign * l) + d) / l over l in
// [LAMBDA_LO, LAMBDA_HI]: coarse geometric scan, then golden-section between
// the neighbors of the scan argmin. The objective diverges at both ends for
// d > 0, so an interior minimum exists.
fn minimize_objective(support: &Support, phi: &PhiFunction, d: f64, sign: f64) -> MinResult {
    let f = |l: f64| {
        let g = support.cumulant(phi, sign * l);
        if g.is_finite() {
            (g + d) / l
        } else {
            f64::INFINITY
        }
    };
    let decades = (LAMBDA_HI / LAMBDA_LO).log10();
    let per_decade = 20usize;
    let n = (decades * per_decade as f64) as usize + 1;
    let step = (LAMBDA_HI / LAMBDA_LO).ln() / (n - 1) as f64;
    let grid_l = |i: usize| LAMBDA_LO * (step * i as f64).exp();
    let mut best_i = 0;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let v = f(grid_l(i));
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let mut a = grid_l(best_i.saturating_sub(1));
    let mut b = grid_l((best_i + 1).min(n - 1));
    // golden-section to relative tolerance 1e-10 in lambda
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INVPHI * (b - a);
    let mut dpt = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(dpt));
    let mut iterations = n;
    while b - a > 1e-10 * b {
        iterations += 1;
        if fc < fd {
            b = dpt;
            dpt = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = dpt;
            fc = fd;
            dpt = a + INVPHI * (b - a);
            fd = f(dpt);
        }
        if iterations > 10_000 {
            break;
        }
    }
    let lambda = 0.5 * (a + b);
    MinResult {
        value: f(lambda).min(best),
        lambda,
        iterations,
    }
}

fn bound_core(
    support: &Support,
    phi: &PhiFunction,
    d: f64,
    sign: BoundSign,
) -> Result<(f64, f64, usize)> {
    phi.require_smooth_conj()?;
    if !d.is_finite() {
        return Err(LuqError::InfiniteDivergence(
            "bounds need a finite divergence".into(),
        ));
    }
    if d <= 0.0 || support.variance() < CONST_OBS_TOL {
        return Ok((0.0, 0.0, 0));
    }
    let s = match sign {
        BoundSign::Plus => 1.0,
        BoundSign::Minus => -1.0,
    };
    let r = minimize_objective(support, phi, d, s);
    let value = match sign {
        BoundSign::Plus => r.value,
        BoundSign::Minus => -r.value,
    };
    Ok((value, r.lambda, r.iterations))
}

/// Upper information bound `B_+` with its optimizer location.
pub fn bound_plus(
    phi: &PhiFunction,
    mu: &GridDensity,
    nu: &GridDensity,
    g: &Observable,
) -> Result<(f64, f64)> {
    let d = divergence(phi, mu, nu)?;
    let support = Support::from_grid(nu, g.values())?;
    let (v, l, _) = bound_core(&support, phi, d, BoundSign::Plus)?;
    Ok((v, l))
}

/// Lower information bound `B_-` with its optimizer location.
pub fn bound_minus(
    phi: &PhiFunction,
    mu: &GridDensity,
    nu: &GridDensity,
    g: &Observable,
) -> Result<(f64, f64)> {
    let d = divergence(phi, mu, nu)?;
    let support = Support::from_grid(nu, g.values())?;
    let (v, l, _) = bound_core(&support, phi, d, BoundSign::Minus)?;
    Ok((v, l))
}

/// Discrete-support counterparts.
pub fn bound_plus_discrete(
    phi: &PhiFunction,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    g: &[f64],
) -> Result<(f64, f64)> {
    let d = divergence_discrete(phi, mu, nu)?;
    let support = Support::from_discrete(nu, g)?;
    let (v, l, _) = bound_core(&support, phi, d, BoundSign::Plus)?;
    Ok((v, l))
}

pub fn bound_minus_discrete(
    phi: &PhiFunction,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    g: &[f64],
) -> Result<(f64, f64)> {
    let d = divergence_discrete(phi, mu, nu)?;
    let support = Support::from_discrete(nu, g)?;
    let (v, l, _) = bound_core(&support, phi, d, BoundSign::Minus)?;
    Ok((v, l))
}

/// `inf { x : eta(x) >= y }` for a nondecreasing `eta` on `[a, b]`, by
/// bisection to an interval of length `1e-12 (b - a)`.
pub fn pseudo_inverse_scalar(
    eta: impl Fn(f64) -> f64,
    y: f64,
    bracket: [f64; 2],
) -> Result<f64> {
    let [a, b] = bracket;
    if !(a < b) {
        return Err(LuqError::InvalidParameter(format!("bracket [{a}, {b}]")));
    }
    let fa = eta(a);
    let fb = eta(b);
    if fa >= y {
        return Ok(a);
    }
    if fb < y {
        return Err(LuqError::OutOfRange(format!(
            "y = {y} above eta({b}) = {fb}"
        )));
    }
    let (mut lo, mut hi) = (a, b); // eta(lo) < y <= eta(hi)
    while hi - lo > 1e-12 * (b - a) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // no representable midpoint left
        }
        if eta(mid) >= y {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `B_+` (or `B_-`) via the representation formula: invert
/// `H(l) = -G(l) + l G'(l)` at the divergence value and evaluate `G'` there.
pub fn representation_bound(
    phi: &PhiFunction,
    nu: &GridDensity,
    g: &Observable,
    d: f64,
    sign: BoundSign,
) -> Result<f64> {
    let support = Support::from_grid(nu, g.values())?;
    representation_core(&support, phi, d, sign)
}

pub fn representation_bound_discrete(
    phi: &PhiFunction,
    nu: &DiscreteDistribution,
    g: &[f64],
    d: f64,
    sign: BoundSign,
) -> Result<f64> {
    let support = Support::from_discrete(nu, g)?;
    representation_core(&support, phi, d, sign)
}

fn representation_core(
    support: &Support,
    phi: &PhiFunction,
    d: f64,
    sign: BoundSign,
) -> Result<f64> {
    phi.require_smooth_conj()?;
    if d < 0.0 || !d.is_finite() {
        return Err(LuqError::InvalidParameter(format!(
            "representation needs finite d >= 0, got {d}"
        )));
    }
    if d == 0.0 || support.variance() < CONST_OBS_TOL {
        return Ok(0.0);
    }
    let s = match sign {
        BoundSign::Plus => 1.0,
        BoundSign::Minus => -1.0,
    };
    // H_+(l) = -G(l) + l G'(l) on l > 0 is nondecreasing; the minus branch
    // uses the substitution l -> -l, i.e. H_-(l) = -G(-l) - l G'(-l).
    let h = |l: f64| {
        let gval = support.cumulant(phi, s * l);
        if !gval.is_finite() {
            return f64::INFINITY;
        }
        -gval + l * support.cumulant_derivative(phi, s * l) * s
    };
    // expand the bracket until H exceeds d
    let mut hi = 1.0;
    let mut guard = 0;
    while h(hi) < d && hi < LAMBDA_HI {
        hi *= 4.0;
        guard += 1;
        if guard > 64 {
            break;
        }
    }
    // When the conjugate blows up at a finite argument the minimizer hugs
    // that edge and grad G is steep there: re-invert on the narrowed bracket
    // until lambda is resolved to f64 spacing. (The previous pass guarantees
    // eta < d strictly below its returned point, so the tightened brackets
    // stay valid.)
    let mut width = hi;
    let mut lambda = pseudo_inverse_scalar(h, d, [0.0, hi])?;
    for _ in 0..2 {
        let tol = 1e-12 * width;
        let lo = (lambda - 1.01 * tol).max(0.0);
        width = lambda - lo;
        if !(width > f64::EPSILON * lambda.abs()) {
            break;
        }
        lambda = pseudo_inverse_scalar(h, d, [lo, lambda])?;
    }
    // grad G at the inverse point, evaluated through the optimality identity
    // grad G(l) = (G(l) + d) / l: pointwise grad G moves by ~1e-5 per ulp of
    // lambda when the minimizer hugs a conjugate-domain edge, while this form
    // is flat there (second order in the lambda error).
    for k in 0..10 {
        let gval = support.cumulant(phi, s * lambda);
        if gval.is_finite() {
            let value = (gval + d) / lambda;
            return Ok(match sign {
                BoundSign::Plus => value,
                BoundSign::Minus => -value,
            });
        }
        // the infimum convention can return the first node past the domain
        lambda *= 1.0 - 1e-12 * f64::powi(2.0, k);
    }
    Ok(support.cumulant_derivative(phi, s * lambda))
}

/// Leading-order bound magnitude `sqrt(2 d2phi*(0) Var_nu(g) d)`.
pub fn linearized_bound(
    phi: &PhiFunction,
    nu: &GridDensity,
    g: &Observable,
    d: f64,
) -> Result<f64> {
    let c = phi
        .d2conj0()
        .ok_or_else(|| LuqError::Capability(format!("d2conj0 undefined for '{}'", phi.name())))?;
    if d < 0.0 {
        return Err(LuqError::InvalidParameter(format!("d = {d}")));
    }
    Ok((2.0 * c * g.variance_under(nu) * d).sqrt())
}

/// Chapman-Robbins bound `sqrt(Var_nu(g)) sqrt(chi^2(mu || nu))`.
pub fn chapman_robbins(mu: &GridDensity, nu: &GridDensity, g: &Observable) -> Result<f64> {
    let chi2 = catalog("chi2", None)?;
    let d = divergence(&chi2, mu, nu)?;
    if !d.is_finite() {
        return Err(LuqError::InfiniteDivergence("chi^2(mu || nu)".into()));
    }
    Ok((g.variance_under(nu) * d).sqrt())
}

/// Csiszar total-variation bound `||g||_inf * ||mu - nu||_TV` with
/// `||mu - nu||_TV = int |rho_mu - rho_nu| dx` (the variational form).
pub fn csiszar_tv_bound(mu: &GridDensity, nu: &GridDensity, g: &Observable) -> Result<f64> {
    mu.require_same_grid(nu)?;
    let sup: f64 = g.values().iter().fold(0.0, |m, &v| m.max(v.abs()));
    Ok(sup * mu.l1_distance(nu)?)
}

/// Evaluate the full report for one comparison: divergence, both information
/// bounds, linearization and the classical comparison bounds.
pub fn evaluate_report(
    phi: &PhiFunction,
    mu: &GridDensity,
    nu: &GridDensity,
    g: &Observable,
) -> Result<BoundReport> {
    let d = divergence(phi, mu, nu)?;
    let gap = g.mean_under(mu) - g.mean_under(nu);
    let support = Support::from_grid(nu, g.values())?;
    let (b_plus, b_minus, lambda_plus, lambda_minus, diagnostics) =
        if d.is_finite() && phi.has_smooth_conj() {
            let (bp, lp, itp) = bound_core(&support, phi, d, BoundSign::Plus)?;
            let (bm, lm, itm) = bound_core(&support, phi, d, BoundSign::Minus)?;
            (
                Some(bp),
                Some(bm),
                Some(lp),
                Some(lm),
                Some(SolverDiagnostics {
                    iterations: itp + itm,
                    bracket: [LAMBDA_LO, LAMBDA_HI],
                }),
            )
        } else {
            (None, None, None, None, None)
        };
    let b_linearized = if d.is_finite() {
        phi.d2conj0()
            .map(|c| (2.0 * c * support.variance() * d).sqrt())
    } else {
        None
    };
    Ok(BoundReport {
        phi: phi.name(),
        divergence: d,
        gap,
        b_plus,
        b_minus,
        b_linearized,
        lambda_star_plus: lambda_plus,
        lambda_star_minus: lambda_minus,
        cr_bound: chapman_robbins(mu, nu, g).ok(),
        tv_bound: csiszar_tv_bound(mu, nu, g).ok(),
        diagnostics,
    })
}
