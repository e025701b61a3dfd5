//! Random-walk Metropolis sampler for the latent-distance network model
//!
//! `logit P(Y_ij = 1) = θ₀ - ||u_i - u_j|| + θ_wᵀ w_ij`
//!
//! with Gaussian priors on the positions and on the coefficients. Positions
//! are updated one node at a time; the coefficients are updated jointly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LatentDraws;
use crate::error::{Error, Result};
use crate::net::RowNormalizedNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSamplerConfig {
    pub dim: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_draws: usize,
    pub step_size: f64,
    pub prior_scale_positions: f64,
    pub prior_scale_coeffs: f64,
    pub seed: u64,
    /// Holds the edge intercept at this value instead of sampling it.
    pub fixed_intercept: Option<f64>,
    /// Ignore the network and sample the prior (reference chains in tests).
    pub prior_only: bool,
}

impl Default for LatentSamplerConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            burn_in: 1000,
            thin: 10,
            n_draws: 200,
            step_size: 0.3,
            prior_scale_positions: 3.0,
            prior_scale_coeffs: 10.0,
            seed: 1,
            fixed_intercept: None,
            prior_only: false,
        }
    }
}

impl LatentSamplerConfig {
    fn validate(&self) -> Result<()> {
        if self.n_draws < 2 {
            return Err(Error::InvalidInput(format!("n_draws must be >= 2, got {}", self.n_draws)));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidInput("step_size must be positive".into()));
        }
        if self.dim == 0 || self.thin == 0 {
            return Err(Error::InvalidInput("dim and thin must be positive".into()));
        }
        if !(self.prior_scale_positions > 0.0 && self.prior_scale_coeffs > 0.0) {
            return Err(Error::InvalidInput("prior scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub position_acceptance: f64,
    pub coefficient_acceptance: f64,
    /// Posterior means of `(θ₀, θ_w...)` over the stored draws.
    pub coefficient_means: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

/// Dyadic covariates `w_ij`, one `n x n` matrix per term.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicCovariates {
    terms: Vec<DMatrix<f64>>,
}

impl DyadicCovariates {
    pub fn none() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[DMatrix<f64>] {
        &self.terms
    }
}

/// `|x_i - x_j|` for continuous columns and `1{x_i = x_j}` for categorical
/// ones. Constant columns (such as an intercept) carry no dyadic information
/// and are skipped.
pub fn dyadic_covariates(x: &DMatrix<f64>, kinds: &[ColumnKind]) -> Result<DyadicCovariates> {
    if kinds.len() != x.ncols() {
        return Err(Error::BadShape(format!("{} column kinds for {} columns", kinds.len(), x.ncols())));
    }
    let n = x.nrows();
    let mut terms = Vec::new();
    for (c, kind) in kinds.iter().enumerate() {
        let col = x.column(c);
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        let m = match kind {
            ColumnKind::Continuous => DMatrix::from_fn(n, n, |i, j| (col[i] - col[j]).abs()),
            ColumnKind::Categorical => {
                DMatrix::from_fn(n, n, |i, j| if i != j && col[i] == col[j] { 1.0 } else { 0.0 })
            }
        };
        terms.push(m);
    }
    Ok(DyadicCovariates { terms })
}

/// Samples with every column of `x` treated as continuous.
pub fn sample_latent_posterior(
    network: &RowNormalizedNetwork,
    x: &DMatrix<f64>,
    cfg: &LatentSamplerConfig,
) -> Result<LatentDraws> {
    if x.nrows() != network.n() {
        return Err(Error::BadShape(format!("X has {} rows for {} nodes", x.nrows(), network.n())));
    }
    let kinds = vec![ColumnKind::Continuous; x.ncols()];
    sample_latent_posterior_with(network, &dyadic_covariates(x, &kinds)?, cfg)
}

pub fn sample_latent_posterior_with(
    network: &RowNormalizedNetwork,
    dyadic: &DyadicCovariates,
    cfg: &LatentSamplerConfig,
) -> Result<LatentDraws> {
    cfg.validate()?;
    let n = network.n();
    if dyadic.terms.iter().any(|t| t.shape() != (n, n)) {
        return Err(Error::BadShape("dyadic covariate terms must be n x n".into()));
    }
    let mut chain = Chain::new(network.raw().binary(), dyadic, cfg);
    let total = cfg.burn_in + cfg.thin * cfg.n_draws;
    let mut draws = Vec::with_capacity(cfg.n_draws);
    let mut coef_sum = vec![0.0; chain.theta.len()];
    for it in 1..=total {
        chain.sweep();
        if !chain.log_post().is_finite() {
            return Err(Error::ChainDiverged { iteration: it });
        }
        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.push(chain.u.clone());
            for (s, t) in coef_sum.iter_mut().zip(chain.theta.iter()) {
                *s += t;
            }
        }
    }
    let diag = SamplerDiagnostics {
        position_acceptance: chain.pos_acc as f64 / chain.pos_tries.max(1) as f64,
        coefficient_acceptance: chain.coef_acc as f64 / chain.coef_tries.max(1) as f64,
        coefficient_means: coef_sum.iter().map(|s| s / cfg.n_draws as f64).collect(),
    };
    Ok(LatentDraws::new(draws)?.with_diagnostics(diag))
}

struct Chain<'a> {
    y: DMatrix<f64>,
    dyadic: &'a DyadicCovariates,
    cfg: &'a LatentSamplerConfig,
    rng: ChaCha8Rng,
    u: DMatrix<f64>,
    theta: DVector<f64>,
    /// `θ_wᵀ w_ij`, cached between coefficient updates.
    cov_part: DMatrix<f64>,
    pos_acc: usize,
    pos_tries: usize,
    coef_acc: usize,
    coef_tries: usize,
}

fn log_lik_edge(y: f64, eta: f64) -> f64 {
    // y η - log(1 + e^η), evaluated stably
    let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
    y * eta - softplus
}

impl<'a> Chain<'a> {
    fn new(y: DMatrix<f64>, dyadic: &'a DyadicCovariates, cfg: &'a LatentSamplerConfig) -> Self {
        let n = y.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let u = DMatrix::from_fn(n, cfg.dim, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        let density = y.sum() / (n * (n - 1)) as f64;
        let start = ((density.clamp(1e-3, 1.0 - 1e-3)) / (1.0 - density.clamp(1e-3, 1.0 - 1e-3))).ln();
        let mut theta = DVector::zeros(1 + dyadic.len());
        theta[0] = cfg.fixed_intercept.unwrap_or(start);
        let mut chain = Self {
            y,
            dyadic,
            cfg,
            rng,
            u,
            theta,
            cov_part: DMatrix::zeros(n, n),
            pos_acc: 0,
            pos_tries: 0,
            coef_acc: 0,
            coef_tries: 0,
        };
        chain.cov_part = chain.covariate_part(&chain.theta);
        chain
    }

    fn covariate_part(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.y.nrows();
        let mut m = DMatrix::zeros(n, n);
        for (t, w) in theta.iter().skip(1).zip(&self.dyadic.terms) {
            m += w * *t;
        }
        m
    }

    fn dist(u: &DMatrix<f64>, i: usize, j: usize) -> f64 {
        let mut s = 0.0;
        for c in 0..u.ncols() {
            let d = u[(i, c)] - u[(j, c)];
            s += d * d;
        }
        s.sqrt()
    }

    fn node_loglik(&self, u: &DMatrix<f64>, i: usize) -> f64 {
        if self.cfg.prior_only {
            return 0.0;
        }
        let n = self.y.nrows();
        let t0 = self.theta[0];
        let mut s = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = Self::dist(u, i, j);
            s += log_lik_edge(self.y[(i, j)], t0 - d + self.cov_part[(i, j)]);
            s += log_lik_edge(self.y[(j, i)], t0 - d + self.cov_part[(j, i)]);
        }
        s
    }

    fn full_loglik(&self, theta0: f64, cov_part: &DMatrix<f64>) -> f64 {
        if self.cfg.prior_only {
            return 0.0;
        }
        let n = self.y.nrows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let eta = theta0 - Self::dist(&self.u, i, j) + cov_part[(i, j)];
                    s += log_lik_edge(self.y[(i, j)], eta);
                }
            }
        }
        s
    }

    fn position_prior(&self, u: &DMatrix<f64>, i: usize) -> f64 {
        let s2 = self.cfg.prior_scale_positions.powi(2);
        -0.5 * u.row(i).norm_squared() / s2
    }

    fn coef_prior(&self, theta: &DVector<f64>) -> f64 {
        -0.5 * theta.norm_squared() / self.cfg.prior_scale_coeffs.powi(2)
    }

    fn log_post(&self) -> f64 {
        let prior: f64 = (0..self.u.nrows()).map(|i| self.position_prior(&self.u, i)).sum();
        self.full_loglik(self.theta[0], &self.cov_part) + prior + self.coef_prior(&self.theta)
    }

    fn sweep(&mut self) {
        let n = self.u.nrows();
        let d = self.u.ncols();
        let step = self.cfg.step_size;
        for i in 0..n {
            let current = self.node_loglik(&self.u, i) + self.position_prior(&self.u, i);
            let saved: Vec<f64> = (0..d).map(|c| self.u[(i, c)]).collect();
            for c in 0..d {
                let z: f64 = self.rng.sample(StandardNormal);
                self.u[(i, c)] += step * z;
            }
            let proposed = self.node_loglik(&self.u, i) + self.position_prior(&self.u, i);
            self.pos_tries += 1;
            let log_u: f64 = self.rng.gen::<f64>().ln();
            if log_u < proposed - current {
                self.pos_acc += 1;
            } else {
                for (c, v) in saved.into_iter().enumerate() {
                    self.u[(i, c)] = v;
                }
            }
        }

        let free_intercept = self.cfg.fixed_intercept.is_none();
        if !free_intercept && self.dyadic.is_empty() {
            return;
        }
        let current = self.full_loglik(self.theta[0], &self.cov_part) + self.coef_prior(&self.theta);
        let mut proposal = self.theta.clone();
        // coefficient moves are smaller than position moves: they touch every dyad
        let coef_step = 0.2 * step;
        for (idx, t) in proposal.iter_mut().enumerate() {
            if idx == 0 && !free_intercept {
                continue;
            }
            let z: f64 = self.rng.sample(StandardNormal);
            *t += coef_step * z;
        }
        let cov = self.covariate_part(&proposal);
        let proposed = self.full_loglik(proposal[0], &cov) + self.coef_prior(&proposal);
        self.coef_tries += 1;
        let log_u: f64 = self.rng.gen::<f64>().ln();
        if log_u < proposed - current {
            self.coef_acc += 1;
            self.theta = proposal;
            self.cov_part = cov;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{row_normalize, Adjacency};

    fn two_node(edge: bool) -> RowNormalizedNetwork {
        let w = if edge { 1.0 } else { 0.0 };
        row_normalize(&Adjacency::from_rows(&[vec![0.0, w], vec![w, 0.0]]).unwrap())
    }

    fn mean_gap(draws: &LatentDraws) -> f64 {
        draws.draws().iter().map(|u| (u[(0, 0)] - u[(1, 0)]).abs()).sum::<f64>() / draws.len() as f64
    }

    #[test]
    fn minimum_configuration_stores_two_draws() {
        let cfg = LatentSamplerConfig { dim: 1, burn_in: 0, thin: 1, n_draws: 2, ..Default::default() };
        let x = DMatrix::from_element(2, 1, 1.0);
        let draws = sample_latent_posterior(&two_node(true), &x, &cfg).unwrap();
        assert_eq!(draws.len(), 2);
        assert!(!draws.aligned());
        assert!(draws.diagnostics().is_some());
    }

    #[test]
    fn present_edge_pulls_nodes_together() {
        let base = LatentSamplerConfig {
            dim: 1,
            burn_in: 500,
            thin: 5,
            n_draws: 4000,
            step_size: 1.0,
            prior_scale_positions: 2.0,
            prior_scale_coeffs: 2.0,
            seed: 11,
            ..Default::default()
        };
        let x = DMatrix::from_element(2, 1, 1.0);
        let post = sample_latent_posterior(&two_node(true), &x, &base).unwrap();
        let prior = sample_latent_posterior(
            &two_node(true),
            &x,
            &LatentSamplerConfig { prior_only: true, ..base.clone() },
        )
        .unwrap();
        assert!(mean_gap(&post) < mean_gap(&prior), "{} vs {}", mean_gap(&post), mean_gap(&prior));
    }

    #[test]
    fn rejects_bad_config() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let cfg = LatentSamplerConfig { n_draws: 1, ..Default::default() };
        assert!(matches!(sample_latent_posterior(&two_node(true), &x, &cfg), Err(Error::InvalidInput(_))));
        let bad_x = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(
            sample_latent_posterior(&two_node(true), &bad_x, &LatentSamplerConfig::default()),
            Err(Error::BadShape(_))
        ));
    }

    #[test]
    fn stable_log_likelihood() {
        assert!((log_lik_edge(1.0, 800.0)).abs() < 1e-12);
        assert!((log_lik_edge(0.0, -800.0)).abs() < 1e-12);
        assert!((log_lik_edge(1.0, 0.0) + std::f64::consts::LN_2).abs() < 1e-15);
    }
}
