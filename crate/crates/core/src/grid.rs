//! Probability densities discretized on uniform 1-D or 2-D grids.
//!
//! `GridDensity` is the carrier for all time-marginal densities in the crate:
//! Fokker-Planck snapshots, kernel density estimates and analytic references
//! all live on the same uniform node layout, and every integral is a
//! trapezoidal sum over those nodes.

use crate::error::{LuqError, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Mass tolerance enforced after construction / normalization.
pub const MASS_TOL: f64 = 1e-6;

/// One uniform grid axis with `n` nodes spanning `[lo, hi]` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo || n < 2 {
            return Err(LuqError::InvalidParameter(format!(
                "axis must satisfy lo < hi (finite) and n >= 2, got [{lo}, {hi}] x {n}"
            )));
        }
        Ok(Axis { lo, hi, n })
    }

    /// Node spacing.
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    /// Coordinate of node `i`.
    pub fn coord(&self, i: usize) -> f64 {
        self.lo + self.step() * i as f64
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    /// Index of the node closest to `x`, clamped to the axis.
    pub fn nearest(&self, x: f64) -> usize {
        let i = ((x - self.lo) / self.step()).round();
        (i.max(0.0) as usize).min(self.n - 1)
    }

    fn approx_eq(&self, other: &Axis) -> bool {
        let scale = (self.hi - self.lo).abs().max(1.0);
        self.n == other.n
            && (self.lo - other.lo).abs() <= 1e-12 * scale
            && (self.hi - other.hi).abs() <= 1e-12 * scale
    }
}

/// Nonnegative density values on a uniform 1-D or 2-D grid with unit
/// trapezoidal mass. For 2-D grids values are x-major: `idx = ix * ny + iy`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDensity {
    axes: Vec<Axis>,
    values: Vec<f64>,
    pub time_tag: Option<f64>,
}

impl GridDensity {
    /// Build a 1-D density from raw nonnegative values; normalizes to unit mass.
    pub fn new_1d(axis: Axis, values: Vec<f64>) -> Result<Self> {
        Self::build(vec![axis], values)
    }

    /// Build a 2-D density from raw nonnegative values (x-major); normalizes to unit mass.
    pub fn new_2d(ax: Axis, ay: Axis, values: Vec<f64>) -> Result<Self> {
        Self::build(vec![ax, ay], values)
    }

    fn build(axes: Vec<Axis>, mut values: Vec<f64>) -> Result<Self> {
        let expected: usize = axes.iter().map(|a| a.n).product();
        if values.len() != expected {
            return Err(LuqError::InvalidParameter(format!(
                "value count {} does not match grid size {}",
                values.len(),
                expected
            )));
        }
        for v in &mut values {
            if !v.is_finite() || *v < -1e-12 {
                return Err(LuqError::InvalidParameter(format!(
                    "density values must be finite and nonnegative, got {v}"
                )));
            }
            if *v < 0.0 {
                *v = 0.0; // roundoff-scale negatives
            }
        }
        let mut density = GridDensity {
            axes,
            values,
            time_tag: None,
        };
        let mass = density.mass();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(LuqError::InvalidParameter(format!(
                "density mass must be positive and finite, got {mass}"
            )));
        }
        for v in &mut density.values {
            *v /= mass;
        }
        Ok(density)
    }

    /// Build a 1-D density by sampling `f` at the grid nodes.
    pub fn from_fn_1d(axis: Axis, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = axis.coords().into_iter().map(f).collect();
        Self::new_1d(axis, values)
    }

    /// Build a 2-D density by sampling `f` at the grid nodes.
    pub fn from_fn_2d(ax: Axis, ay: Axis, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(ax.n * ay.n);
        for ix in 0..ax.n {
            let x = ax.coord(ix);
            for iy in 0..ay.n {
                values.push(f(x, ay.coord(iy)));
            }
        }
        Self::new_2d(ax, ay, values)
    }

    /// Normalized Gaussian on a 1-D grid.
    pub fn gaussian_1d(axis: Axis, mean: f64, var: f64) -> Result<Self> {
        if var <= 0.0 {
            return Err(LuqError::InvalidParameter(format!(
                "gaussian variance must be positive, got {var}"
            )));
        }
        Self::from_fn_1d(axis, |x| (-(x - mean).powi(2) / (2.0 * var)).exp())
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time_tag = Some(t);
        self
    }

    /// Trapezoidal quadrature weight of node `idx` (product weight in 2-D).
    pub fn quad_weight(&self, idx: usize) -> f64 {
        match self.axes.len() {
            1 => axis_weight(&self.axes[0], idx),
            2 => {
                let ny = self.axes[1].n;
                axis_weight(&self.axes[0], idx / ny) * axis_weight(&self.axes[1], idx % ny)
            }
            _ => unreachable!("grids are 1-D or 2-D"),
        }
    }

    /// All quadrature weights, in value order.
    pub fn quad_weights(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.quad_weight(i)).collect()
    }

    /// Trapezoidal integral of the density (the mass).
    pub fn mass(&self) -> f64 {
        (0..self.values.len())
            .map(|i| self.quad_weight(i) * self.values[i])
            .sum()
    }

    /// Trapezoidal integral of `f(node) * rho(node)`.
    pub fn expectation_fn(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let mut coords = [0.0_f64; 2];
        (0..self.values.len())
            .map(|i| {
                self.node_coords(i, &mut coords);
                self.quad_weight(i) * self.values[i] * f(&coords[..self.dims()])
            })
            .sum()
    }

    /// Trapezoidal integral of `g[i] * rho[i]` for nodewise values `g`.
    pub fn expectation(&self, g: &[f64]) -> f64 {
        assert_eq!(g.len(), self.values.len(), "nodewise value count mismatch");
        (0..self.values.len())
            .map(|i| self.quad_weight(i) * self.values[i] * g[i])
            .sum()
    }

    /// Coordinates of node `idx` written into `out`.
    pub fn node_coords(&self, idx: usize, out: &mut [f64]) {
        match self.axes.len() {
            1 => out[0] = self.axes[0].coord(idx),
            2 => {
                let ny = self.axes[1].n;
                out[0] = self.axes[0].coord(idx / ny);
                out[1] = self.axes[1].coord(idx % ny);
            }
            _ => unreachable!(),
        }
    }

    /// True when both densities live on the same node layout.
    pub fn same_grid(&self, other: &GridDensity) -> bool {
        self.axes.len() == other.axes.len()
            && self
                .axes
                .iter()
                .zip(&other.axes)
                .all(|(a, b)| a.approx_eq(b))
    }

    pub fn require_same_grid(&self, other: &GridDensity) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(LuqError::GridMismatch(format!(
                "{:?} vs {:?}",
                self.axes, other.axes
            )))
        }
    }

    /// Replace the values (same layout), renormalizing to unit mass.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut d = Self::build(self.axes.clone(), values)?;
        d.time_tag = self.time_tag;
        Ok(d)
    }

    /// Mean and variance of the coordinate along `axis_k` under the density.
    pub fn moments(&self, axis_k: usize) -> (f64, f64) {
        let mut coords = [0.0_f64; 2];
        let mut mean = 0.0;
        let mut second = 0.0;
        for i in 0..self.values.len() {
            self.node_coords(i, &mut coords);
            let w = self.quad_weight(i) * self.values[i];
            mean += w * coords[axis_k];
            second += w * coords[axis_k] * coords[axis_k];
        }
        (mean, second - mean * mean)
    }

    /// L1 distance to another density on the same grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        self.require_same_grid(other)?;
        Ok((0..self.values.len())
            .map(|i| self.quad_weight(i) * (self.values[i] - other.values[i]).abs())
            .sum())
    }

    /// CSV export: header `x[,y],rho`, rows in value (row-major) order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.dims() {
            1 => {
                writeln!(w, "x,rho")?;
                for i in 0..self.values.len() {
                    writeln!(w, "{},{}", self.axes[0].coord(i), self.values[i])?;
                }
            }
            _ => {
                writeln!(w, "x,y,rho")?;
                let ny = self.axes[1].n;
                for i in 0..self.values.len() {
                    writeln!(
                        w,
                        "{},{},{}",
                        self.axes[0].coord(i / ny),
                        self.axes[1].coord(i % ny),
                        self.values[i]
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn axis_weight(axis: &Axis, i: usize) -> f64 {
    let h = axis.step();
    if i == 0 || i + 1 == axis.n {
        0.5 * h
    } else {
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_has_unit_mass_and_moments() {
        let axis = Axis::new(-10.0, 10.0, 2001).unwrap();
        let d = GridDensity::gaussian_1d(axis, 0.5, 1.5).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-12);
        let (m, v) = d.moments(0);
        assert!((m - 0.5).abs() < 1e-9);
        assert!((v - 1.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_negative_values() {
        let axis = Axis::new(0.0, 1.0, 5).unwrap();
        let err = GridDensity::new_1d(axis, vec![1.0, -0.5, 1.0, 1.0, 1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn two_d_weights_are_tensor_products() {
        let ax = Axis::new(0.0, 1.0, 3).unwrap();
        let ay = Axis::new(0.0, 2.0, 5).unwrap();
        let d = GridDensity::from_fn_2d(ax, ay, |_, _| 1.0).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-12);
        // corner node carries quarter weight
        assert!((d.quad_weight(0) - 0.25 * ax.step() * ay.step()).abs() < 1e-15);
    }

    #[test]
    fn marginal_coordinates_roundtrip() {
        let ax = Axis::new(-1.0, 1.0, 11).unwrap();
        let ay = Axis::new(0.0, 4.0, 9).unwrap();
        let d = GridDensity::from_fn_2d(ax, ay, |x, y| (-(x * x + y * y)).exp()).unwrap();
        let mut c = [0.0; 2];
        d.node_coords(3 * 9 + 7, &mut c);
        assert_eq!(c[0], ax.coord(3));
        assert_eq!(c[1], ay.coord(7));
    }
}
