//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cpd::AlsOptions;
use crate::error::{Error, Result};
use crate::filtered::{FcpdOptions, VOptions, DEFAULT_LAMBDAS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Unconstrained CP decomposition, branches by integrating `H`.
    Cpd,
    /// Filtered decomposition with a search over `λ`.
    Fcpd,
    /// Score two model files against the function.
    Compare,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cpd => "cpd",
            Mode::Fcpd => "fcpd",
            Mode::Compare => "compare",
        }
    }
}

/// Everything one run needs. Relative paths are resolved against the
/// directory holding the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Polynomial to decouple, in the monomial JSON format.
    pub function: PathBuf,
    /// Number of branches `r`.
    pub rank: usize,
    /// Number of operating points `N`.
    pub points: usize,
    /// Operating points are drawn uniformly from `(lo, hi)` in every input.
    pub bounds: (f64, f64),
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_v_iterations")]
    pub v_iterations: usize,
    #[serde(default = "default_v_gradient_tolerance")]
    pub v_gradient_tolerance: f64,
    #[serde(default = "default_cpd_max_sweeps")]
    pub cpd_max_sweeps: usize,
    #[serde(default = "default_cpd_tolerance")]
    pub cpd_tolerance: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Score models on the training points instead of a fresh set.
    #[serde(default)]
    pub validate_on_training: bool,
    /// Size of the fresh validation set; defaults to `points`.
    #[serde(default)]
    pub validation_points: Option<usize>,
    #[serde(default)]
    pub model_a: Option<PathBuf>,
    #[serde(default)]
    pub model_b: Option<PathBuf>,
}

fn default_lambdas() -> Vec<f64> {
    DEFAULT_LAMBDAS.to_vec()
}
fn default_restarts() -> usize {
    5
}
fn default_max_sweeps() -> usize {
    200
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_v_iterations() -> usize {
    VOptions::default().max_iterations
}
fn default_v_gradient_tolerance() -> f64 {
    VOptions::default().gradient_tolerance
}
fn default_cpd_max_sweeps() -> usize {
    AlsOptions::default().max_iterations
}
fn default_cpd_tolerance() -> f64 {
    AlsOptions::default().tolerance
}
fn default_degree() -> usize {
    3
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_mode() -> Mode {
    Mode::Fcpd
}

impl RunConfig {
    /// Parse a configuration, resolving relative paths against `base`.
    pub fn from_json_str(text: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig = serde_json::from_str(text).map_err(Error::from_json)?;
        for path in [
            Some(&mut config.function),
            Some(&mut config.out_dir),
            config.model_a.as_mut(),
            config.model_b.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_str(&text, base)
    }

    /// Check every invariant that can be checked without running a solver.
    pub fn validate(&self) -> Result<()> {
        let require_file = |field: &str, path: &Path| {
            if path.is_file() {
                Ok(())
            } else {
                Err(Error::validation(
                    field,
                    format!("file {} does not exist", path.display()),
                ))
            }
        };
        require_file("function", &self.function)?;
        if self.rank < 1 {
            return Err(Error::validation("rank", "must be at least 1"));
        }
        if self.points < 1 {
            return Err(Error::validation("points", "must be at least 1"));
        }
        let (lo, hi) = self.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::validation(
                "bounds",
                format!("need lo < hi, got ({lo}, {hi})"),
            ));
        }
        if self.lambdas.is_empty() {
            return Err(Error::validation("lambdas", "grid must not be empty"));
        }
        if let Some(l) = self.lambdas.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::validation(
                "lambdas",
                format!("{l} is not a positive number"),
            ));
        }
        for (field, value) in [
            ("restarts", self.restarts),
            ("max_sweeps", self.max_sweeps),
            ("v_iterations", self.v_iterations),
            ("cpd_max_sweeps", self.cpd_max_sweeps),
            ("degree", self.degree),
        ] {
            if value < 1 {
                return Err(Error::validation(field, "must be at least 1"));
            }
        }
        for (field, value) in [
            ("tolerance", self.tolerance),
            ("v_gradient_tolerance", self.v_gradient_tolerance),
            ("cpd_tolerance", self.cpd_tolerance),
        ] {
            if !(value > 0.0) {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if self.mode != Mode::Compare && self.points <= self.degree {
            return Err(Error::validation(
                "points",
                format!("need more than degree = {} points", self.degree),
            ));
        }
        if self.validation_points == Some(0) {
            return Err(Error::validation("validation_points", "must be at least 1"));
        }
        if self.mode == Mode::Compare {
            for (field, path) in [("model_a", &self.model_a), ("model_b", &self.model_b)] {
                match path {
                    Some(p) => require_file(field, p)?,
                    None => return Err(Error::validation(field, "required in compare mode")),
                }
            }
        }
        Ok(())
    }

    pub fn fcpd_options(&self) -> FcpdOptions {
        FcpdOptions {
            als: AlsOptions {
                max_iterations: self.max_sweeps,
                tolerance: self.tolerance,
                seed: self.seed,
                restarts: self.restarts,
            },
            lambdas: self.lambdas.clone(),
            v_solver: VOptions {
                max_iterations: self.v_iterations,
                gradient_tolerance: self.v_gradient_tolerance,
            },
            branch_degree: self.degree,
        }
    }

    pub fn cpd_options(&self) -> AlsOptions {
        AlsOptions {
            max_iterations: self.cpd_max_sweeps,
            tolerance: self.cpd_tolerance,
            seed: self.seed,
            restarts: self.restarts,
        }
    }
}
