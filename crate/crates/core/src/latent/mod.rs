//! Posterior draws of the latent homophily matrix `U` and their
//! matrix-normal summary.

mod draws_file;
mod matrix_normal;
mod procrustes;
mod sampler;

pub use draws_file::{read_draws, write_draws, parse_draws, format_draws};
pub use matrix_normal::{
    fit_matrix_normal, fit_matrix_normal_with, matrix_normal_loglik, MatrixNormalApprox,
    MatrixNormalOptions, S11Reading,
};
pub use procrustes::{alignment_spread, procrustes_align};
pub use sampler::{
    dyadic_covariates, sample_latent_posterior, sample_latent_posterior_with, ColumnKind,
    DyadicCovariates, LatentSamplerConfig, SamplerDiagnostics,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `K` draws of an `n x D` latent matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraws {
    n: usize,
    d: usize,
    draws: Vec<DMatrix<f64>>,
    aligned: bool,
    diagnostics: Option<SamplerDiagnostics>,
    comments: Vec<String>,
}

impl LatentDraws {
    pub fn new(draws: Vec<DMatrix<f64>>) -> Result<Self> {
        if draws.len() < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 draws, got {}", draws.len())));
        }
        let (n, d) = draws[0].shape();
        if n == 0 || d == 0 {
            return Err(Error::BadShape("draws must have at least one row and column".into()));
        }
        for (k, u) in draws.iter().enumerate() {
            if u.shape() != (n, d) {
                return Err(Error::BadShape(format!(
                    "draw {k} is {}x{}, expected {n}x{d}",
                    u.nrows(),
                    u.ncols()
                )));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("draw {k}")));
            }
        }
        Ok(Self { n, d, draws, aligned: false, diagnostics: None, comments: Vec::new() })
    }

    pub(crate) fn with_diagnostics(mut self, diagnostics: SamplerDiagnostics) -> Self {
        self.diagnostics = Some(diagnostics);
        self
    }

    pub(crate) fn into_aligned(mut self, draws: Vec<DMatrix<f64>>) -> Self {
        self.draws = draws;
        self.aligned = true;
        self
    }

    /// Attaches free-text comment lines, written as `# ...` before the header.
    pub fn with_comments(mut self, comments: Vec<String>) -> Self {
        self.comments = comments;
        self
    }

    pub fn comments(&self) -> &[String] {
        &self.comments
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[DMatrix<f64>] {
        &self.draws
    }

    pub fn aligned(&self) -> bool {
        self.aligned
    }

    pub fn diagnostics(&self) -> Option<&SamplerDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// Element-wise mean of the draws.
    pub fn mean(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.d);
        for u in &self.draws {
            m += u;
        }
        m / self.draws.len() as f64
    }
}
