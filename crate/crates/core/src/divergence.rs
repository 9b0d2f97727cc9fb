//! Divergence evaluation between grid and discrete densities.
//!
//! Grid divergences use the reference-measure form with the grid Lebesgue
//! measure as the dominating measure, so no absolute continuity between the
//! inputs has to be assumed a priori. Nodes where the second argument falls
//! below a floor are excluded from the integrand; if the excluded mass of
//! the first argument exceeds a tolerance, the divergence is `+inf`
//! (absolute-continuity failure at grid resolution).

use crate::error::{LuqError, Result};
use crate::grid::GridDensity;
use crate::phi::PhiFunction;

/// Excluded-mass threshold above which the divergence is declared infinite.
pub const ABS_CONTINUITY_TOL: f64 = 1e-6;

/// Floor under which reference-density values are excluded, relative to the
/// grid span.
pub fn density_floor(nu: &GridDensity) -> f64 {
    let span: f64 = (0..nu.dims())
        .map(|k| nu.axis(k).hi - nu.axis(k).lo)
        .product();
    1e-300 * span
}

/// `D_phi(mu || nu)` by trapezoidal quadrature of `phi(rho_mu / rho_nu) rho_nu`.
/// Returns `+inf` when more than [`ABS_CONTINUITY_TOL`] of `mu`-mass sits on
/// nodes where `rho_nu` is below the floor.
pub fn divergence(phi: &PhiFunction, mu: &GridDensity, nu: &GridDensity) -> Result<f64> {
    mu.require_same_grid(nu)?;
    let floor = density_floor(nu);
    let mut total = 0.0;
    let mut excluded_mass = 0.0;
    for i in 0..nu.len() {
        let w = nu.quad_weight(i);
        let rn = nu.value(i);
        let rm = mu.value(i);
        if rn <= floor {
            excluded_mass += w * rm;
        } else {
            total += w * phi.phi(rm / rn) * rn;
        }
    }
    if excluded_mass > ABS_CONTINUITY_TOL {
        return Ok(f64::INFINITY);
    }
    Ok(total)
}

/// A finite probability vector; used by brute-force oracles and the
/// coarse-graining (information monotonicity) machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(LuqError::InvalidParameter(
                "discrete distribution needs at least one weight".into(),
            ));
        }
        let mut sum = 0.0;
        for &w in &weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(LuqError::InvalidParameter(format!(
                    "weights must be finite and nonnegative, got {w}"
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(LuqError::InvalidParameter(format!(
                "weights must sum to 1 within 1e-12, got {sum}"
            )));
        }
        Ok(DiscreteDistribution { weights })
    }

    /// Normalize arbitrary nonnegative weights to a distribution.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(LuqError::InvalidParameter(format!(
                "weight sum must be positive, got {sum}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `D_phi(mu || nu) = sum_i phi(mu_i / nu_i) nu_i`; `+inf` when `mu` puts
/// mass on an index where `nu` vanishes.
pub fn divergence_discrete(
    phi: &PhiFunction,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(LuqError::GridMismatch(format!(
            "support sizes {} vs {}",
            mu.len(),
            nu.len()
        )));
    }
    let mut total = 0.0;
    for (&m, &n) in mu.weights().iter().zip(nu.weights()) {
        if n == 0.0 {
            if m > 0.0 {
                return Ok(f64::INFINITY);
            }
        } else {
            total += phi.phi(m / n) * n;
        }
    }
    Ok(total)
}

/// Index blocks of a partition of `{0, .., n-1}`.
pub type Partition = Vec<Vec<usize>>;

/// Coarse-grain a discrete distribution by summing over partition blocks.
/// The partition must cover the support disjointly.
pub fn coarse_grain(d: &DiscreteDistribution, partition: &Partition) -> Result<DiscreteDistribution> {
    validate_partition(d.len(), partition)?;
    let sums = partition
        .iter()
        .map(|block| block.iter().map(|&i| d.weights()[i]).sum())
        .collect();
    DiscreteDistribution::normalized(sums)
}

/// Coarse-grain a grid density into block integrals (trapezoidal).
pub fn coarse_grain_grid(d: &GridDensity, partition: &Partition) -> Result<DiscreteDistribution> {
    validate_partition(d.len(), partition)?;
    let sums = partition
        .iter()
        .map(|block| block.iter().map(|&i| d.quad_weight(i) * d.value(i)).sum())
        .collect();
    DiscreteDistribution::normalized(sums)
}

fn validate_partition(n: usize, partition: &Partition) -> Result<()> {
    let mut seen = vec![false; n];
    for block in partition {
        for &i in block {
            if i >= n || seen[i] {
                return Err(LuqError::InvalidParameter(format!(
                    "partition must cover {{0..{n}}} disjointly (index {i})"
                )));
            }
            seen[i] = true;
        }
    }
    if seen.iter().all(|&s| s) {
        Ok(())
    } else {
        Err(LuqError::InvalidParameter(
            "partition does not cover the support".into(),
        ))
    }
}

/// Duality lower bound `max_f { <f, mu> - <phi*(f), nu> }` over the supplied
/// test functions (nodewise values on the shared grid). Always at most the
/// divergence, up to quadrature roundoff.
pub fn variational_lower_bound(
    phi: &PhiFunction,
    mu: &GridDensity,
    nu: &GridDensity,
    fs: &[Vec<f64>],
) -> Result<f64> {
    mu.require_same_grid(nu)?;
    let mut best = f64::NEG_INFINITY;
    for f in fs {
        if f.len() != mu.len() {
            return Err(LuqError::GridMismatch(format!(
                "test function length {} vs grid size {}",
                f.len(),
                mu.len()
            )));
        }
        let lhs = mu.expectation(f);
        let conj_vals: Vec<f64> = f.iter().map(|&s| phi.conj(s)).collect();
        let rhs = nu.expectation(&conj_vals);
        best = best.max(lhs - rhs);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::phi::catalog;
    use proptest::prelude::*;

    fn grid() -> Axis {
        Axis::new(-10.0, 10.0, 2001).unwrap()
    }

    #[test]
    fn kl_between_equal_gaussians_is_zero() {
        let phi = catalog("kl", None).unwrap();
        let d = GridDensity::gaussian_1d(grid(), 0.0, 1.0).unwrap();
        assert!(divergence(&phi, &d, &d).unwrap().abs() < 1e-8);
    }

    #[test]
    fn kl_gaussian_mean_shift_matches_closed_form() {
        let phi = catalog("kl", None).unwrap();
        let mu = GridDensity::gaussian_1d(grid(), 1.0, 1.0).unwrap();
        let nu = GridDensity::gaussian_1d(grid(), 0.0, 1.0).unwrap();
        let d = divergence(&phi, &mu, &nu).unwrap();
        assert!((d - 0.5).abs() < 1e-3, "got {d}");
    }

    #[test]
    fn chi2_gaussian_mean_shift_matches_closed_form() {
        let phi = catalog("chi2", None).unwrap();
        let mu = GridDensity::gaussian_1d(grid(), 0.5, 1.0).unwrap();
        let nu = GridDensity::gaussian_1d(grid(), 0.0, 1.0).unwrap();
        let d = divergence(&phi, &mu, &nu).unwrap();
        let expected = 0.25_f64.exp() - 1.0;
        assert!((d - expected).abs() < 1e-3, "got {d} vs {expected}");
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let phi = catalog("kl", None).unwrap();
        let a = GridDensity::gaussian_1d(grid(), 0.0, 1.0).unwrap();
        let b = GridDensity::gaussian_1d(Axis::new(-10.0, 10.0, 1001).unwrap(), 0.0, 1.0).unwrap();
        assert!(divergence(&phi, &a, &b).is_err());
    }

    #[test]
    fn absolute_continuity_failure_returns_infinity() {
        let phi = catalog("kl", None).unwrap();
        let axis = Axis::new(0.0, 1.0, 101).unwrap();
        // nu supported on the left half, mu on the right half
        let nu = GridDensity::from_fn_1d(axis, |x| if x < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let mu = GridDensity::from_fn_1d(axis, |x| if x >= 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!(divergence(&phi, &mu, &nu).unwrap().is_infinite());
    }

    #[test]
    fn discrete_examples() {
        let tv = catalog("tv", None).unwrap();
        let half = DiscreteDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(divergence_discrete(&tv, &half, &half).unwrap(), 0.0);
        let point = DiscreteDistribution::new(vec![1.0, 0.0]).unwrap();
        assert!((divergence_discrete(&tv, &point, &half).unwrap() - 0.5).abs() < 1e-15);

        let kl = catalog("kl", None).unwrap();
        let mu = DiscreteDistribution::new(vec![0.7, 0.3]).unwrap();
        let expected = 0.7 * (1.4_f64).ln() + 0.3 * (0.6_f64).ln();
        assert!((divergence_discrete(&kl, &mu, &half).unwrap() - expected).abs() < 1e-14);

        // mass where nu vanishes
        assert!(divergence_discrete(&kl, &half, &point).unwrap().is_infinite());
    }

    #[test]
    fn coarse_grain_blocks_sum() {
        let d = DiscreteDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let coarse = coarse_grain(&d, &vec![vec![0, 1], vec![2]]).unwrap();
        assert_eq!(coarse.weights(), &[0.5, 0.5]);

        let uniform = DiscreteDistribution::new(vec![0.25; 4]).unwrap();
        let coarse = coarse_grain(&uniform, &vec![vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(coarse.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn non_covering_partition_rejected() {
        let d = DiscreteDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(coarse_grain(&d, &vec![vec![0], vec![2]]).is_err());
        assert!(coarse_grain(&d, &vec![vec![0, 0], vec![1, 2]]).is_err());
    }

    #[test]
    fn variational_bound_below_divergence_and_tight_at_log_ratio() {
        let phi = catalog("kl", None).unwrap();
        let mu = GridDensity::gaussian_1d(grid(), 1.0, 1.0).unwrap();
        let nu = GridDensity::gaussian_1d(grid(), 0.0, 1.0).unwrap();
        let d = divergence(&phi, &mu, &nu).unwrap();

        // family c * (x - 1/2): scaled optimal log-ratio direction
        let coords = grid().coords();
        let fs: Vec<Vec<f64>> = (0..41)
            .map(|k| {
                let c = 0.05 * k as f64;
                coords.iter().map(|&x| c * (x - 0.5)).collect()
            })
            .collect();
        let lb = variational_lower_bound(&phi, &mu, &nu, &fs).unwrap();
        assert!(lb <= d + 1e-8, "lb {lb} vs divergence {d}");
        assert!((lb - 0.5).abs() < 1e-3, "approaches 0.5 from below, got {lb}");

        // mu = nu dominates at 0
        let same = variational_lower_bound(&phi, &nu, &nu, &fs).unwrap();
        assert!(same <= 1e-8);
    }

    #[test]
    fn variational_bound_brute_force_discrete_as_grid() {
        // chi2 on a tiny grid, exhaustive step functions over a coefficient grid
        let phi = catalog("chi2", None).unwrap();
        let axis = Axis::new(0.0, 1.0, 2).unwrap();
        let mu = GridDensity::new_1d(axis, vec![1.4, 0.6]).unwrap();
        let nu = GridDensity::new_1d(axis, vec![1.0, 1.0]).unwrap();
        let d = divergence(&phi, &mu, &nu).unwrap();
        let mut fs = Vec::new();
        for a in -40..=40 {
            for b in -40..=40 {
                fs.push(vec![a as f64 * 0.05, b as f64 * 0.05]);
            }
        }
        let lb = variational_lower_bound(&phi, &mu, &nu, &fs).unwrap();
        assert!(lb <= d + 1e-8);
        assert!((lb - d).abs() < 1e-3, "lb {lb} vs d {d}");
    }

    proptest! {
        // Premetric + information monotonicity on random discrete pairs.
        #[test]
        fn monotone_under_coarse_graining(
            raw_mu in proptest::collection::vec(0.01f64..1.0, 4..10),
            raw_nu in proptest::collection::vec(0.01f64..1.0, 4..10),
            cut in 1usize..3,
        ) {
            let n = raw_mu.len().min(raw_nu.len());
            let mu = DiscreteDistribution::normalized(raw_mu[..n].to_vec()).unwrap();
            let nu = DiscreteDistribution::normalized(raw_nu[..n].to_vec()).unwrap();
            let split = cut.min(n - 1);
            let partition = vec![(0..split).collect::<Vec<_>>(), (split..n).collect::<Vec<_>>()];
            for name in ["kl", "hellinger", "tv", "chi2"] {
                let phi = catalog(name, None).unwrap();
                let fine = divergence_discrete(&phi, &mu, &nu).unwrap();
                let coarse = divergence_discrete(
                    &phi,
                    &coarse_grain(&mu, &partition).unwrap(),
                    &coarse_grain(&nu, &partition).unwrap(),
                ).unwrap();
                prop_assert!(fine >= -1e-12, "premetric");
                prop_assert!(fine + 1e-12 >= coarse, "{name}: {fine} vs {coarse}");
            }
        }

        // Joint convexity in the pair of arguments.
        #[test]
        fn jointly_convex(
            a in proptest::collection::vec(0.05f64..1.0, 5),
            b in proptest::collection::vec(0.05f64..1.0, 5),
            c in proptest::collection::vec(0.05f64..1.0, 5),
            d in proptest::collection::vec(0.05f64..1.0, 5),
            t in 0.05f64..0.95,
        ) {
            let mu1 = DiscreteDistribution::normalized(a).unwrap();
            let mu2 = DiscreteDistribution::normalized(b).unwrap();
            let nu1 = DiscreteDistribution::normalized(c).unwrap();
            let nu2 = DiscreteDistribution::normalized(d).unwrap();
            let mix = |p: &DiscreteDistribution, q: &DiscreteDistribution| {
                DiscreteDistribution::new(
                    p.weights().iter().zip(q.weights()).map(|(&x, &y)| t * x + (1.0 - t) * y).collect()
                ).unwrap()
            };
            for name in ["kl", "hellinger", "chi2"] {
                let phi = catalog(name, None).unwrap();
                let lhs = divergence_discrete(&phi, &mix(&mu1, &mu2), &mix(&nu1, &nu2)).unwrap();
                let rhs = t * divergence_discrete(&phi, &mu1, &nu1).unwrap()
                    + (1.0 - t) * divergence_discrete(&phi, &mu2, &nu2).unwrap();
                prop_assert!(lhs <= rhs + 1e-10, "{name}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn reference_measure_independence_under_refinement() {
        // grid divergence vs divergence of cell-mass vectors, halving the step
        let phi = catalog("kl", None).unwrap();
        let mut prev_gap = f64::INFINITY;
        for &n in &[251usize, 501, 1001] {
            let axis = Axis::new(-8.0, 8.0, n).unwrap();
            let mu = GridDensity::gaussian_1d(axis, 0.7, 1.3).unwrap();
            let nu = GridDensity::gaussian_1d(axis, 0.0, 1.0).unwrap();
            let d_grid = divergence(&phi, &mu, &nu).unwrap();
            let cells: Partition = (0..n).map(|i| vec![i]).collect();
            let d_cells = divergence_discrete(
                &phi,
                &coarse_grain_grid(&mu, &cells).unwrap(),
                &coarse_grain_grid(&nu, &cells).unwrap(),
            )
            .unwrap();
            let gap = (d_grid - d_cells).abs();
            assert!(gap <= prev_gap + 1e-12);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-3, "refinement agreement, final gap {prev_gap}");
    }
}
