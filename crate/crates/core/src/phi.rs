//! The catalog of divergence generators and their Legendre-Fenchel conjugates.
//!
//! Every generator is strictly convex with `phi(1) = 0`, `dphi(1) = 0` and
//! `inf phi > -inf`, which makes the induced divergence a premetric. Entries
//! printed with a nonzero slope at `u = 1` (the alpha family) are brought to
//! normal form by subtracting the affine part `(u - 1) * dphi(1)`; this
//! leaves the divergence between probability measures unchanged and removes
//! the generator ambiguity `D_{f + c(u-1)} = D_f`.

use crate::error::{LuqError, Result};
use serde::{Deserialize, Serialize};

/// Generator family, selected by name in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhiKind {
    /// `u log u - u + 1`
    Kl,
    /// `(sqrt(u) - 1)^2`
    Hellinger,
    /// `|u - 1| / 2`; no second derivative, no smooth conjugate.
    TotalVariation,
    /// `(u - 1)^2`
    Chi2,
    /// Normalized alpha family; `alpha = 1` is KL, `alpha = -1` is reverse KL.
    Alpha(f64),
    /// `|u - 1|^alpha`, `1 <= alpha < inf`.
    ChiAlpha(f64),
}

/// A divergence generator with derivatives and convex conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiFunction {
    kind: PhiKind,
}

/// Look up a catalog member by name. `alpha`/`chi_alpha` need a parameter.
pub fn catalog(name: &str, param: Option<f64>) -> Result<PhiFunction> {
    let kind = match name {
        "kl" => PhiKind::Kl,
        "hellinger" => PhiKind::Hellinger,
        "tv" => PhiKind::TotalVariation,
        "chi2" => PhiKind::Chi2,
        "alpha" => {
            let a = param.ok_or_else(|| {
                LuqError::InvalidParameter("alpha divergence needs a parameter".into())
            })?;
            if !a.is_finite() {
                return Err(LuqError::InvalidParameter(format!("alpha = {a}")));
            }
            PhiKind::Alpha(a)
        }
        "chi_alpha" => {
            let a = param.ok_or_else(|| {
                LuqError::InvalidParameter("chi_alpha divergence needs a parameter".into())
            })?;
            if !(a >= 1.0 && a.is_finite()) {
                return Err(LuqError::InvalidParameter(format!(
                    "chi_alpha requires 1 <= alpha < inf, got {a}"
                )));
            }
            PhiKind::ChiAlpha(a)
        }
        other => {
            return Err(LuqError::InvalidParameter(format!(
                "unknown divergence generator '{other}'"
            )))
        }
    };
    Ok(PhiFunction { kind })
}

/// Names accepted by [`catalog`], with parameter schema.
pub fn catalog_names() -> Vec<&'static str> {
    vec![
        "kl",
        "hellinger",
        "tv",
        "chi2",
        "alpha(alpha)",
        "chi_alpha(alpha)",
    ]
}

impl PhiFunction {
    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    pub fn name(&self) -> String {
        match self.kind {
            PhiKind::Kl => "kl".into(),
            PhiKind::Hellinger => "hellinger".into(),
            PhiKind::TotalVariation => "tv".into(),
            PhiKind::Chi2 => "chi2".into(),
            PhiKind::Alpha(a) => format!("alpha({a})"),
            PhiKind::ChiAlpha(a) => format!("chi_alpha({a})"),
        }
    }

    /// Generator value at `u >= 0`; `+inf` where the generator blows up.
    pub fn phi(&self, u: f64) -> f64 {
        debug_assert!(u >= 0.0, "generators are defined on [0, inf)");
        match self.kind {
            PhiKind::Kl => {
                if u == 0.0 {
                    1.0
                } else {
                    u * u.ln() - u + 1.0
                }
            }
            PhiKind::Hellinger => {
                let d = u.sqrt() - 1.0;
                d * d
            }
            PhiKind::TotalVariation => 0.5 * (u - 1.0).abs(),
            PhiKind::Chi2 => (u - 1.0) * (u - 1.0),
            PhiKind::Alpha(a) => alpha_phi(a, u),
            PhiKind::ChiAlpha(a) => (u - 1.0).abs().powf(a),
        }
    }

    /// First derivative. For `tv` this is the subgradient `sign(u-1)/2`,
    /// which is never used by the bounds machinery (capability-gated).
    pub fn dphi(&self, u: f64) -> f64 {
        match self.kind {
            PhiKind::Kl => u.ln(),
            PhiKind::Hellinger => 1.0 - 1.0 / u.sqrt(),
            PhiKind::TotalVariation => 0.5 * (u - 1.0).signum(),
            PhiKind::Chi2 => 2.0 * (u - 1.0),
            PhiKind::Alpha(a) => alpha_dphi(a, u),
            PhiKind::ChiAlpha(a) => {
                let d = u - 1.0;
                a * d.abs().powf(a - 1.0) * d.signum()
            }
        }
    }

    /// Whether the generator is C^2 with a strictly positive, finite second
    /// derivative wherever the bound integrands need it.
    pub fn has_c2(&self) -> bool {
        match self.kind {
            PhiKind::TotalVariation => false,
            PhiKind::ChiAlpha(a) => a >= 2.0,
            _ => true,
        }
    }

    /// Second derivative where defined; `Err` for generators without one.
    pub fn d2phi(&self, u: f64) -> Result<f64> {
        match self.kind {
            PhiKind::Kl => Ok(1.0 / u),
            PhiKind::Hellinger => Ok(0.5 * u.powf(-1.5)),
            PhiKind::TotalVariation => Err(self.capability_err("d2phi")),
            PhiKind::Chi2 => Ok(2.0),
            PhiKind::Alpha(a) => Ok(alpha_d2phi(a, u)),
            PhiKind::ChiAlpha(a) => {
                if a < 2.0 {
                    Err(self.capability_err("d2phi"))
                } else {
                    Ok(a * (a - 1.0) * (u - 1.0).abs().powf(a - 2.0))
                }
            }
        }
    }

    /// Whether the conjugate is smooth enough for the bounds machinery
    /// (golden-section over the cumulant and difference quotients of it).
    pub fn has_smooth_conj(&self) -> bool {
        !matches!(self.kind, PhiKind::TotalVariation)
            && !matches!(self.kind, PhiKind::ChiAlpha(a) if a == 1.0)
    }

    pub fn require_smooth_conj(&self) -> Result<()> {
        if self.has_smooth_conj() {
            Ok(())
        } else {
            Err(self.capability_err("smooth conjugate"))
        }
    }

    pub fn require_c2(&self) -> Result<()> {
        if self.has_c2() {
            Ok(())
        } else {
            Err(self.capability_err("d2phi"))
        }
    }

    fn capability_err(&self, what: &str) -> LuqError {
        LuqError::Capability(format!("{} is not available for '{}'", what, self.name()))
    }

    /// Legendre-Fenchel conjugate `phi*(s) = sup_{u >= 0} { u s - phi(u) }`.
    /// `+inf` outside the effective domain.
    pub fn conj(&self, s: f64) -> f64 {
        match self.kind {
            PhiKind::Kl => s.exp_m1(),
            PhiKind::Hellinger => {
                if s < 1.0 {
                    s / (1.0 - s)
                } else {
                    f64::INFINITY
                }
            }
            PhiKind::TotalVariation => {
                if s > 0.5 {
                    f64::INFINITY
                } else {
                    s.max(-0.5)
                }
            }
            PhiKind::Chi2 => {
                if s >= -2.0 {
                    s + 0.25 * s * s
                } else {
                    -1.0
                }
            }
            PhiKind::Alpha(a) => alpha_conj(a, s),
            PhiKind::ChiAlpha(a) => {
                if a == 1.0 {
                    if s > 1.0 {
                        f64::INFINITY
                    } else {
                        s.max(-1.0)
                    }
                } else if s < -a {
                    -1.0
                } else {
                    s + (a - 1.0) * (s.abs() / a).powf(a / (a - 1.0))
                }
            }
        }
    }

    /// Derivative of the conjugate on the interior of its domain.
    pub fn dconj(&self, s: f64) -> f64 {
        match self.kind {
            PhiKind::Kl => s.exp(),
            PhiKind::Hellinger => {
                if s < 1.0 {
                    let d = 1.0 - s;
                    1.0 / (d * d)
                } else {
                    f64::INFINITY
                }
            }
            PhiKind::TotalVariation => {
                if (-0.5..=0.5).contains(&s) {
                    1.0
                } else if s < -0.5 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PhiKind::Chi2 => {
                if s >= -2.0 {
                    1.0 + 0.5 * s
                } else {
                    0.0
                }
            }
            PhiKind::Alpha(a) => alpha_dconj(a, s),
            PhiKind::ChiAlpha(a) => {
                if a == 1.0 {
                    if (-1.0..=1.0).contains(&s) {
                        1.0
                    } else if s < -1.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else if s < -a {
                    0.0
                } else {
                    1.0 + (s.abs() / a).powf(1.0 / (a - 1.0)) * s.signum()
                }
            }
        }
    }

    /// `d^2 phi*(0)`, the curvature entering the linearized bound; `None`
    /// when the generator is not C^2 at `u = 1` (corollary hypotheses fail).
    pub fn d2conj0(&self) -> Option<f64> {
        match self.kind {
            PhiKind::Kl => Some(1.0),
            PhiKind::Hellinger => Some(2.0),
            PhiKind::TotalVariation => None,
            PhiKind::Chi2 => Some(0.5),
            PhiKind::Alpha(_) => Some(1.0),
            PhiKind::ChiAlpha(a) => {
                if a == 2.0 {
                    Some(0.5)
                } else {
                    None
                }
            }
        }
    }

    pub fn param(&self) -> Option<f64> {
        match self.kind {
            PhiKind::Alpha(a) | PhiKind::ChiAlpha(a) => Some(a),
            _ => None,
        }
    }
}

// Normalized alpha family. For alpha != +-1 the table entry
// 4/(1-alpha^2) (1 - u^{(1+alpha)/2}) has slope -2/(1-alpha) at u = 1; the
// affine correction 2/(1-alpha) (u - 1) restores dphi(1) = 0. The limits
// alpha -> +-1 of the normalized family are exactly u log u - u + 1 and
// -log u + u - 1.
fn alpha_phi(a: f64, u: f64) -> f64 {
    if a == 1.0 {
        return PhiFunction { kind: PhiKind::Kl }.phi(u);
    }
    if a == -1.0 {
        return if u == 0.0 {
            f64::INFINITY
        } else {
            -u.ln() + u - 1.0
        };
    }
    let beta = 0.5 * (1.0 + a);
    // (1 - a)(1 + a) rather than 1 - a^2: near a = 1 the latter cancels
    let c = 4.0 / ((1.0 - a) * (1.0 + a));
    let k = 2.0 / (1.0 - a);
    if u == 0.0 {
        // c (1 - u^beta) -> +inf when beta < 0, i.e. alpha < -1
        if beta < 0.0 {
            return f64::INFINITY;
        }
        return c - k * 1.0 + k - k; // c (1-0) + k (0-1) = c - k
    }
    c * (1.0 - u.powf(beta)) + k * (u - 1.0)
}

fn alpha_dphi(a: f64, u: f64) -> f64 {
    if a == 1.0 {
        return u.ln();
    }
    if a == -1.0 {
        return 1.0 - 1.0 / u;
    }
    let beta = 0.5 * (1.0 + a);
    let k = 2.0 / (1.0 - a);
    // c beta = k, so dphi = k (1 - u^{beta - 1})
    k * (1.0 - u.powf(beta - 1.0))
}

fn alpha_d2phi(a: f64, u: f64) -> f64 {
    if a == 1.0 {
        return 1.0 / u;
    }
    if a == -1.0 {
        return 1.0 / (u * u);
    }
    let beta = 0.5 * (1.0 + a);
    let k = 2.0 / (1.0 - a);
    k * (1.0 - beta) * u.powf(beta - 2.0)
}

// Conjugate of the normalized alpha generator:
//   phi*(s) = (c - k) [ (1 - s/k)^{(1+alpha)/(alpha-1)} - 1 ],  c - k = 2/(1+alpha)
// on the branch where the supremum is interior; constant -2/(1+alpha) when the
// supremum sits at u = 0 (alpha > 1, s <= k); +inf outside the domain.
fn alpha_conj(a: f64, s: f64) -> f64 {
    if a == 1.0 {
        return s.exp_m1();
    }
    if a == -1.0 {
        return if s < 1.0 { -(-s).ln_1p() } else { f64::INFINITY };
    }
    let k = 2.0 / (1.0 - a);
    let cmk = 2.0 / (1.0 + a);
    let q = (1.0 + a) / (a - 1.0);
    let w = 1.0 - s / k;
    if a > 1.0 {
        // k < 0: interior branch for s > k, boundary u = 0 below
        if s <= k {
            return -cmk;
        }
        cmk * (w.powf(q) - 1.0)
    } else {
        // |a| < 1 or a < -1: domain is s < k with k > 0
        if s >= k {
            return f64::INFINITY;
        }
        cmk * (w.powf(q) - 1.0)
    }
}

fn alpha_dconj(a: f64, s: f64) -> f64 {
    if a == 1.0 {
        return s.exp();
    }
    if a == -1.0 {
        return if s < 1.0 { 1.0 / (1.0 - s) } else { f64::INFINITY };
    }
    let k = 2.0 / (1.0 - a);
    let cmk = 2.0 / (1.0 + a);
    let q = (1.0 + a) / (a - 1.0);
    let w = 1.0 - s / k;
    if a > 1.0 && s <= k {
        return 0.0;
    }
    if a < 1.0 && s >= k {
        return f64::INFINITY;
    }
    -cmk * q / k * w.powf(q - 1.0)
}

/// Numeric Legendre transform `sup_u { u s - phi(u) }` over `u = 0` plus a
/// log-spaced grid on `(0, u_max]`, refined by golden-section around the grid
/// argmax. Serves as the oracle for the closed-form conjugates.
pub fn conjugate_numeric(phi: &PhiFunction, s: f64, u_max: f64, n: usize) -> f64 {
    assert!(u_max > 0.0 && n >= 100, "u_max > 0 and n >= 100 required");
    let objective = |u: f64| u * s - phi.phi(u);
    let u_min = 1e-12_f64.min(u_max / 2.0);
    let ratio = (u_max / u_min).ln() / (n - 1) as f64;
    let grid_u = |i: usize| u_min * (ratio * i as f64).exp();
    let mut best_i = 0usize;
    let mut best = objective(0.0);
    for i in 0..n {
        let v = objective(grid_u(i));
        if v > best {
            best = v;
            best_i = i;
        }
    }
    // local refinement between the neighbors of the argmax
    let lo = if best_i == 0 { 0.0 } else { grid_u(best_i - 1) };
    let hi = grid_u((best_i + 1).min(n - 1)).min(u_max);
    best.max(golden_max(objective, lo, hi))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if b - a < 1e-14 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_members() -> Vec<PhiFunction> {
        vec![
            catalog("kl", None).unwrap(),
            catalog("hellinger", None).unwrap(),
            catalog("tv", None).unwrap(),
            catalog("chi2", None).unwrap(),
            catalog("alpha", Some(0.0)).unwrap(),
            catalog("alpha", Some(0.5)).unwrap(),
            catalog("alpha", Some(1.0)).unwrap(),
            catalog("alpha", Some(-1.0)).unwrap(),
            catalog("alpha", Some(3.0)).unwrap(),
            catalog("alpha", Some(-3.0)).unwrap(),
            catalog("chi_alpha", Some(1.0)).unwrap(),
            catalog("chi_alpha", Some(1.5)).unwrap(),
            catalog("chi_alpha", Some(2.0)).unwrap(),
            catalog("chi_alpha", Some(3.0)).unwrap(),
        ]
    }

    #[test]
    fn normality_at_one() {
        for phi in all_members() {
            assert!(phi.phi(1.0).abs() <= 1e-12, "{}: phi(1)", phi.name());
            if phi.has_smooth_conj() {
                assert!(phi.dphi(1.0).abs() <= 1e-12, "{}: dphi(1)", phi.name());
            }
            // inf phi > -inf: evaluate on a wide sample
            for &u in &[0.0, 1e-6, 0.3, 1.0, 3.0, 1e4] {
                assert!(phi.phi(u) > -1e12, "{}: phi({u}) bounded below", phi.name());
            }
        }
    }

    #[test]
    fn convexity_on_midpoints() {
        for phi in all_members() {
            for &(u1, u2) in &[(0.1, 0.5), (0.5, 2.0), (1.0, 4.0), (0.01, 10.0)] {
                let mid = 0.5 * (u1 + u2);
                assert!(
                    phi.phi(mid) <= 0.5 * (phi.phi(u1) + phi.phi(u2)) + 1e-12,
                    "{}: convexity at ({u1},{u2})",
                    phi.name()
                );
            }
        }
    }

    #[test]
    fn conj_at_zero_is_zero() {
        for phi in all_members() {
            assert_eq!(phi.conj(0.0), 0.0, "{}: conj(0)", phi.name());
        }
    }

    #[test]
    fn dconj_at_zero_is_one() {
        // the supremizer of { 0 - phi(u) } is u = 1 for every normalized member
        for phi in all_members() {
            if phi.has_smooth_conj() {
                assert!(
                    (phi.dconj(0.0) - 1.0).abs() <= 1e-12,
                    "{}: dconj(0)",
                    phi.name()
                );
            }
        }
    }

    #[test]
    fn table_values() {
        let chi2 = catalog("chi2", None).unwrap();
        assert_eq!(chi2.phi(2.0), 1.0);
        let kl = catalog("kl", None).unwrap();
        assert!((kl.conj(1.0) - (std::f64::consts::E - 1.0)).abs() < 1e-14);
        assert_eq!(chi2.conj(2.0), 3.0);
    }

    #[test]
    fn closed_form_conj_matches_numeric_transform() {
        for phi in all_members() {
            for &s in &[-3.0, -1.0, -0.4, 0.0, 0.2, 0.45] {
                let closed = phi.conj(s);
                if !closed.is_finite() {
                    continue;
                }
                let numeric = conjugate_numeric(&phi, s, 1e4, 4000);
                let scale = closed.abs().max(1e-3);
                assert!(
                    (closed - numeric).abs() <= 1e-6 * scale,
                    "{}: conj({s}) closed {closed} vs numeric {numeric}",
                    phi.name()
                );
            }
        }
    }

    #[test]
    fn numeric_conjugate_boundary_cases() {
        let kl = catalog("kl", None).unwrap();
        assert!(conjugate_numeric(&kl, 0.0, 100.0, 2000).abs() <= 1e-9);
        let chi2 = catalog("chi2", None).unwrap();
        // supremum at u = 0 with value -phi(0) = -1
        assert!((conjugate_numeric(&chi2, -3.0, 100.0, 2000) + 1.0).abs() <= 1e-9);
        let hell = catalog("hellinger", None).unwrap();
        assert!((conjugate_numeric(&hell, 0.5, 100.0, 4000) - 1.0).abs() <= 1e-7);
    }

    #[test]
    fn alpha_limits_match_kl_forms() {
        // alpha -> 1 approaches u log u - u + 1; alpha -> -1 approaches -log u + u - 1
        let near1 = catalog("alpha", Some(1.0 - 1e-7)).unwrap();
        let kl = catalog("kl", None).unwrap();
        for &u in &[0.3, 0.9, 1.5, 4.0] {
            assert!((near1.phi(u) - kl.phi(u)).abs() < 1e-6, "u = {u}");
        }
        let nearm1 = catalog("alpha", Some(-1.0 + 1e-7)).unwrap();
        let revkl = catalog("alpha", Some(-1.0)).unwrap();
        for &u in &[0.3, 0.9, 1.5, 4.0] {
            assert!((nearm1.phi(u) - revkl.phi(u)).abs() < 1e-6, "u = {u}");
        }
    }

    #[test]
    fn fenchel_young_inequality_holds() {
        for phi in all_members() {
            for &s in &[-2.0, -0.3, 0.0, 0.4] {
                let conj = phi.conj(s);
                if !conj.is_finite() {
                    continue;
                }
                for &u in &[0.0, 0.2, 1.0, 2.5, 20.0] {
                    assert!(
                        conj >= u * s - phi.phi(u) - 1e-10,
                        "{}: Fenchel-Young at s={s}, u={u}",
                        phi.name()
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(catalog("renyi", None).is_err());
        assert!(catalog("chi_alpha", Some(0.5)).is_err());
        assert!(catalog("alpha", None).is_err());
    }
}
