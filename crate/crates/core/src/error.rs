use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped loosely by the stage that raises them; the CLI maps
/// them onto exit codes through [`Error::is_numerical`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // network construction
    #[error("adjacency entry ({row}, {col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("adjacency diagonal entry {index} is nonzero: {value}")]
    NonzeroDiagonal { index: usize, value: f64 },
    #[error("power iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    // shapes and inputs
    #[error("shape mismatch: {0}")]
    BadShape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),

    // latent positions
    #[error("latent sampler diverged at iteration {iteration}: log posterior is not finite")]
    ChainDiverged { iteration: usize },
    #[error("draw {draw} has zero variance in every column")]
    RankDeficient { draw: usize },
    #[error("all latent draws are identical; the matrix-normal MLE is undefined")]
    DegenerateDraws,
    #[error("{which} lost positive definiteness (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { which: String, min_eigenvalue: f64 },

    // likelihood evaluation
    #[error("|rho| * spectral_norm(A) = {product} is not below 1 (rho = {rho})")]
    Unstable { rho: f64, product: f64 },
    #[error("covariance factorization failed: {0}")]
    FactorizationFailure(String),

    // estimation
    #[error("instrument matrix is rank deficient: {0}")]
    RankDeficientInstruments(String),
    #[error("second-stage regression is singular")]
    SingularSecondStage,
    #[error("every optimizer start ended with a non-finite objective (last error: {0})")]
    AllStartsFailed(String),
    #[error("Hessian is not positive definite (eigenvalues {eigenvalues:?})")]
    IndefiniteHessian { eigenvalues: Vec<f64> },

    // simulation
    #[error("generated network has no edges")]
    EmptyNetwork,
    #[error("forward simulation diverged at step {step} (max |y| = {max_abs:e})")]
    Diverging { step: usize, max_abs: f64 },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::NegativeEntry { .. }
                | Error::NonzeroDiagonal { .. }
                | Error::BadShape(_)
                | Error::InvalidInput(_)
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
