//! Information-theoretic uncertainty quantification for stochastic
//! dynamical models.
//!
//! The crate quantifies the error of reduced/approximate SDE models against
//! a reference model by computing phi-divergences between evolving
//! probability densities, and evaluates the associated observable-error
//! inequalities and divergence bounds:
//!
//! - [`phi`], [`divergence`]: divergence generators, conjugates, and
//!   divergence evaluation on grid and discrete densities;
//! - [`bounds`]: goal-oriented observable-error inequalities and their
//!   representation/linearization, plus classical comparison bounds;
//! - [`sde`], [`kolmogorov`]: ensemble integration and forward Kolmogorov
//!   (Fokker-Planck) density evolution;
//! - [`reconstruction`]: the reconstructed vector field and the
//!   field-based divergence bound;
//! - [`ftdr`]: finite-time divergence rates, the FTDR difference bound and
//!   the pathspace finite-marginal bound;
//! - [`slowfast`]: the slow-fast case study comparing reduced models.

// `!(x > 0.0)`-style guards reject NaN parameters as well; keep them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod divergence;
pub mod error;
pub mod ftdr;
pub mod grid;
pub mod kolmogorov;
pub mod phi;
pub mod reconstruction;
pub mod sde;
pub mod slowfast;

pub use error::{LuqError, Result};
pub use grid::{Axis, GridDensity};
pub use phi::{catalog, conjugate_numeric, PhiFunction};
