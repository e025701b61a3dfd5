//! Log posteriors and analytic gradients for the four model families.
//!
//! | family             | mean            | covariance            |
//! |--------------------|-----------------|-----------------------|
//! | `Hane`             | `M(Λγ + Xβ)`    | `M(gΩ + σ²I)Mᵀ`       |
//! | `Hand`             | `Λγ + Xβ`       | `gΩ + σ²MMᵀ`          |
//! | `NamEffects`       | `MXβ`           | `σ²MMᵀ`               |
//! | `NamDisturbances`  | `Xβ`            | `σ²MMᵀ`               |
//!
//! with `M = (I - ρA)⁻¹` and `g = γᵀΨγ`. The log posterior is the exact
//! Gaussian log likelihood plus the unnormalized prior terms
//! `-βᵀβ/2σ_β² - γᵀγ/2σ_γ² - (ρ-μ_ρ)²/2σ_ρ² - (a/2+1) log σ² - b/2σ²`
//! (the γ term only for the latent families).

mod eval;

pub use eval::{grad_log_posterior, log_posterior, nam_loglik, EvalContext, Evaluation, Gradient};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::MatrixNormalApprox;

/// Outcome vector and design matrix (first column is the intercept).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::BadShape(format!("X has {} rows, y has {}", x.nrows(), y.len())));
        }
        if column_names.len() != x.ncols() {
            return Err(Error::BadShape(format!(
                "{} column names for {} columns",
                column_names.len(),
                x.ncols()
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        let rank = x.clone().svd(false, false).rank(1e-10 * x.norm().max(1.0));
        if rank < x.ncols() {
            return Err(Error::InvalidInput(format!(
                "design matrix has rank {rank} < {} columns",
                x.ncols()
            )));
        }
        Ok(Self { y, x, column_names })
    }

    /// Dataset with generated column names (`(intercept)`, `x1`, ...).
    pub fn unnamed(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let names = (0..x.ncols())
            .map(|j| if j == 0 { "(intercept)".to_string() } else { format!("x{j}") })
            .collect();
        Self::new(y, x, names)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// `θ = (β, γ, ρ, σ²)`; `gamma` is empty for the NAM families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
}

impl ParamVector {
    pub fn new(beta: Vec<f64>, gamma: Vec<f64>, rho: f64, sigma2: f64) -> Result<Self> {
        let theta = Self { beta, gamma, rho, sigma2 };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.beta.iter().chain(&self.gamma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.gamma.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[β, γ, ρ, log σ²]`, the optimizer's coordinates.
    pub fn to_internal(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.beta.iter().chain(&self.gamma).copied().collect();
        v.push(self.rho);
        v.push(self.sigma2.ln());
        DVector::from_vec(v)
    }

    pub fn from_internal(z: &DVector<f64>, p: usize, d: usize) -> Self {
        Self {
            beta: z.rows(0, p).iter().copied().collect(),
            gamma: z.rows(p, d).iter().copied().collect(),
            rho: z[p + d],
            sigma2: z[p + d + 1].exp(),
        }
    }

    /// Names in internal order, using `beta_names` for β.
    pub fn names(beta_names: &[String], d: usize) -> Vec<String> {
        let mut names: Vec<String> = beta_names.to_vec();
        names.extend((1..=d).map(|j| format!("gamma{j}")));
        names.push("rho".into());
        names.push("sigma2".into());
        names
    }
}

/// Hyperparameters of `β ~ N(0, σ_β²I)`, `γ ~ N(0, σ_γ²I)`,
/// `ρ ~ trN(μ_ρ, σ_ρ², -1, 1)`, `σ² ~ IG(a/2, b/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub sigma_beta: f64,
    pub sigma_gamma: f64,
    pub mu_rho: f64,
    pub sigma_rho: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self { sigma_beta: 2.25, sigma_gamma: 2.25, mu_rho: 0.36, sigma_rho: 0.7, a: 2.0, b: 2.0 }
    }
}

impl Priors {
    /// Effectively flat priors; the remaining `-(a/2) log σ²` term is of order 1e-10.
    pub fn flat() -> Self {
        Self { sigma_beta: 1e6, sigma_gamma: 1e6, mu_rho: 0.0, sigma_rho: 1e6, a: 1e-10, b: 1e-10 }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.sigma_beta, self.sigma_gamma, self.sigma_rho, self.a, self.b];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !self.mu_rho.is_finite() {
            return Err(Error::InvalidInput(format!("invalid priors {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "HANE")]
    Hane,
    #[serde(rename = "HAND")]
    Hand,
    #[serde(rename = "NAM_EFFECTS")]
    NamEffects,
    #[serde(rename = "NAM_DISTURBANCES")]
    NamDisturbances,
}

impl ModelKind {
    pub fn has_latent(self) -> bool {
        matches!(self, ModelKind::Hane | ModelKind::Hand)
    }

    /// Effects form: `ρ` acts on outcomes (`M` multiplies the mean).
    pub fn is_effects(self) -> bool {
        matches!(self, ModelKind::Hane | ModelKind::NamEffects)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hane => "HANE",
            ModelKind::Hand => "HAND",
            ModelKind::NamEffects => "NAM_EFFECTS",
            ModelKind::NamDisturbances => "NAM_DISTURBANCES",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HANE" => Ok(ModelKind::Hane),
            "HAND" => Ok(ModelKind::Hand),
            "NAM_EFFECTS" | "NAM-EFFECTS" => Ok(ModelKind::NamEffects),
            "NAM_DISTURBANCES" | "NAM-DISTURBANCES" => Ok(ModelKind::NamDisturbances),
            other => Err(Error::InvalidInput(format!("unknown model family `{other}`"))),
        }
    }
}

/// Model kind plus the latent summary the homophily-adjusted kinds need.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily {
    kind: ModelKind,
    latent: Option<Arc<MatrixNormalApprox>>,
}

impl ModelFamily {
    pub fn new(kind: ModelKind, latent: Option<Arc<MatrixNormalApprox>>) -> Result<Self> {
        if kind.has_latent() != latent.is_some() {
            return Err(Error::InvalidInput(format!(
                "{kind} {} a latent approximation",
                if kind.has_latent() { "requires" } else { "does not take" }
            )));
        }
        Ok(Self { kind, latent })
    }

    pub fn nam_effects() -> Self {
        Self { kind: ModelKind::NamEffects, latent: None }
    }

    pub fn nam_disturbances() -> Self {
        Self { kind: ModelKind::NamDisturbances, latent: None }
    }

    pub fn hane(latent: Arc<MatrixNormalApprox>) -> Self {
        Self { kind: ModelKind::Hane, latent: Some(latent) }
    }

    pub fn hand(latent: Arc<MatrixNormalApprox>) -> Self {
        Self { kind: ModelKind::Hand, latent: Some(latent) }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn latent(&self) -> Option<&MatrixNormalApprox> {
        self.latent.as_deref()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.as_ref().map_or(0, |l| l.dim())
    }
}
