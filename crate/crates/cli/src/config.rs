//! Experiment configuration: one structured TOML file per run.
//!
//! Custom drift/diffusion fields are polynomial coefficient lists only; the
//! named presets cover the standard models. The fully resolved config is
//! echoed into every run directory.

use luq_core::error::{LuqError, Result};
use luq_core::grid::{Axis, GridDensity};
use luq_core::sde::{Calculus, SdeModel};
use luq_core::slowfast::SlowFastParams;
use serde::{Deserialize, Serialize};

/// Pipelines selectable on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Divergence,
    Bound,
    Fpe,
    ReconstructBound,
    FtdrField,
    PathspaceBound,
    CaseStudy,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Divergence => "divergence",
            Command::Bound => "bound",
            Command::Fpe => "fpe",
            Command::ReconstructBound => "reconstruct-bound",
            Command::FtdrField => "ftdr-field",
            Command::PathspaceBound => "pathspace-bound",
            Command::CaseStudy => "case-study",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiBlock {
    pub name: String,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridBlock {
    pub fn axis(&self) -> Result<Axis> {
        Axis::new(self.lo, self.hi, self.n)
    }
}

/// Analytic density specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum DensityBlock {
    Gaussian {
        mean: f64,
        var: f64,
    },
    /// weighted sum of Gaussian components
    Mixture {
        means: Vec<f64>,
        vars: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl DensityBlock {
    pub fn build(&self, axis: Axis) -> Result<GridDensity> {
        match self {
            DensityBlock::Gaussian { mean, var } => GridDensity::gaussian_1d(axis, *mean, *var),
            DensityBlock::Mixture {
                means,
                vars,
                weights,
            } => {
                if means.len() != vars.len() || means.len() != weights.len() || means.is_empty() {
                    return Err(LuqError::InvalidParameter(
                        "mixture needs equally many means, vars and weights".into(),
                    ));
                }
                if vars.iter().any(|&v| v <= 0.0) || weights.iter().any(|&w| w < 0.0) {
                    return Err(LuqError::InvalidParameter(
                        "mixture variances must be positive, weights nonnegative".into(),
                    ));
                }
                let (means, vars, weights) = (means.clone(), vars.clone(), weights.clone());
                GridDensity::from_fn_1d(axis, move |x| {
                    means
                        .iter()
                        .zip(&vars)
                        .zip(&weights)
                        .map(|((&m, &v), &w)| {
                            w / v.sqrt() * (-(x - m) * (x - m) / (2.0 * v)).exp()
                        })
                        .sum()
                })
            }
        }
    }
}

/// Drift/diffusion model presets; custom fields are polynomials in x.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "preset")]
pub enum ModelBlock {
    Ou {
        beta: f64,
        #[serde(default)]
        mean: f64,
        sigma: f64,
    },
    DoubleWell {
        a: f64,
        b: f64,
        sigma: f64,
    },
    CustomPolynomial {
        drift: Vec<f64>,
        diffusion: Vec<f64>,
    },
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl ModelBlock {
    pub fn build(&self) -> Result<SdeModel> {
        match self {
            ModelBlock::Ou { beta, mean, sigma } => {
                if *beta <= 0.0 || *sigma < 0.0 {
                    return Err(LuqError::InvalidParameter(
                        "ou needs beta > 0 and sigma >= 0".into(),
                    ));
                }
                Ok(SdeModel::ou(*beta, *mean, *sigma))
            }
            ModelBlock::DoubleWell { a, b, sigma } => {
                let (a, b, sigma) = (*a, *b, *sigma);
                if b <= 0.0 || sigma < 0.0 {
                    return Err(LuqError::InvalidParameter(
                        "double-well needs b > 0 and sigma >= 0".into(),
                    ));
                }
                Ok(SdeModel::scalar(
                    Calculus::Ito,
                    move |_, x| a * x - b * x * x * x,
                    move |_, _| sigma,
                    format!("double-well(a={a},b={b},sigma={sigma})"),
                ))
            }
            ModelBlock::CustomPolynomial { drift, diffusion } => {
                if drift.is_empty() || diffusion.is_empty() {
                    return Err(LuqError::InvalidParameter(
                        "custom-polynomial needs nonempty coefficient lists".into(),
                    ));
                }
                let (dc, sc) = (drift.clone(), diffusion.clone());
                Ok(SdeModel::scalar(
                    Calculus::Ito,
                    move |_, x| horner(&dc, x),
                    move |_, x| horner(&sc, x),
                    "custom-polynomial".to_string(),
                ))
            }
        }
    }
}

/// Observables for the bound pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum ObservableBlock {
    Coordinate,
    Tanh { scale: f64 },
    Polynomial { coeffs: Vec<f64> },
}

impl ObservableBlock {
    pub fn values(&self, axis: Axis) -> Vec<f64> {
        axis.coords()
            .into_iter()
            .map(|x| match self {
                ObservableBlock::Coordinate => x,
                ObservableBlock::Tanh { scale } => (scale * x).tanh(),
                ObservableBlock::Polynomial { coeffs } => horner(coeffs, x),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowFastBlock {
    pub beta: f64,
    pub gamma: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub eps: f64,
}

impl SlowFastBlock {
    pub fn build(&self) -> Result<SlowFastParams> {
        SlowFastParams::new(self.beta, self.gamma, self.sigma_x, self.sigma_y, self.eps)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    /// explicit step; when absent, solvers derive it from their stability bound
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
    /// ftdr-field: samples per seed point and ball radius
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_eps_ball")]
    pub eps_ball: f64,
    /// pathspace-bound: marginal times
    #[serde(default)]
    pub times: Vec<f64>,
    /// case-study: bootstrap resamples
    #[serde(default = "default_bootstrap")]
    pub n_bootstrap: usize,
}

fn default_snapshots() -> usize {
    41
}
fn default_n_traj() -> usize {
    100_000
}
fn default_n_samples() -> usize {
    20_000
}
fn default_eps_ball() -> f64 {
    0.5
}
fn default_bootstrap() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_out_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into()]
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

/// The whole experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// optional; must match the CLI subcommand when present
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub phi: Option<PhiBlock>,
    #[serde(default)]
    pub grid: Option<GridBlock>,
    #[serde(default)]
    pub grid_y: Option<GridBlock>,
    #[serde(default)]
    pub density_mu: Option<DensityBlock>,
    #[serde(default)]
    pub density_nu: Option<DensityBlock>,
    #[serde(default)]
    pub model_mu: Option<ModelBlock>,
    #[serde(default)]
    pub model_nu: Option<ModelBlock>,
    #[serde(default)]
    pub observable: Option<ObservableBlock>,
    #[serde(default)]
    pub slowfast: Option<SlowFastBlock>,
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            LuqError::InvalidParameter(format!("cannot read config {path:?}: {e}"))
        })?;
        toml::from_str(&text)
            .map_err(|e| LuqError::InvalidParameter(format!("config parse error: {e}")))
    }

    pub fn phi(&self) -> Result<luq_core::PhiFunction> {
        let block = self
            .phi
            .as_ref()
            .ok_or_else(|| LuqError::InvalidParameter("missing [phi] block".into()))?;
        luq_core::catalog(&block.name, block.alpha)
    }

    pub fn grid_axis(&self) -> Result<Axis> {
        self.grid
            .as_ref()
            .ok_or_else(|| LuqError::InvalidParameter("missing [grid] block".into()))?
            .axis()
    }
}

/// Unwrap an optional config block with a pointed error message.
pub fn require_block<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| LuqError::InvalidParameter(format!("missing [{name}] block")))
}
