//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor with its log-determinant.
pub(crate) struct Factor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Factor {
    pub fn new(m: DMatrix<f64>, what: &str) -> Result<Self> {
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::FactorizationFailure(format!("{what} is not positive definite")))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::FactorizationFailure(format!("{what} has a non-finite log-determinant")));
        }
        Ok(Self { chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenvalues of a (generally non-symmetric) network matrix, used to get
/// `log det(I - rho A)` and `Tr(A (I - rho A)⁻¹)` in O(n) per `rho`.
///
/// Falls back to dense LU evaluation when the real Schur form does not
/// converge or its determinant disagrees with LU at a probe point.
#[derive(Debug, Clone)]
pub(crate) enum Spectrum {
    Eigen(Vec<(f64, f64)>),
    Dense(DMatrix<f64>),
}

impl Spectrum {
    pub fn new(a: &DMatrix<f64>, probe_rho: f64) -> Self {
        let n = a.nrows();
        let eig = a.clone().try_schur(1e-14, 10_000).map(|s| s.complex_eigenvalues());
        if let Some(eig) = eig {
            let values: Vec<(f64, f64)> = eig.iter().map(|z| (z.re, z.im)).collect();
            let spec = Spectrum::Eigen(values);
            let dense = Spectrum::Dense(a.clone());
            let ok = [probe_rho, -probe_rho].iter().all(|&r| {
                match (spec.log_det_i_minus(r), dense.log_det_i_minus(r)) {
                    (Ok(x), Ok(y)) => (x - y).abs() <= 1e-10 * (1.0 + y.abs()) * (n as f64).sqrt(),
                    _ => false,
                }
            });
            if ok {
                return spec;
            }
        }
        Spectrum::Dense(a.clone())
    }

    /// `log det(I - rho A)`; errors if the determinant is not positive.
    pub fn log_det_i_minus(&self, rho: f64) -> Result<f64> {
        match self {
            Spectrum::Eigen(values) => {
                let mut s = 0.0;
                for &(re, im) in values {
                    let (zr, zi) = (1.0 - rho * re, -rho * im);
                    s += 0.5 * (zr * zr + zi * zi).ln();
                }
                Ok(s)
            }
            Spectrum::Dense(a) => {
                let n = a.nrows();
                let b = DMatrix::identity(n, n) - a * rho;
                let det = b.lu().determinant();
                if det > 0.0 && det.is_finite() {
                    Ok(det.ln())
                } else {
                    Err(Error::FactorizationFailure(format!(
                        "det(I - rho A) = {det} at rho = {rho}"
                    )))
                }
            }
        }
    }

    /// `Tr(A (I - rho A)⁻¹)`.
    pub fn trace_am(&self, rho: f64) -> Result<f64> {
        match self {
            Spectrum::Eigen(values) => {
                let mut t = 0.0;
                for &(re, im) in values {
                    // Re[ λ / (1 - ρλ) ]
                    let (dr, di) = (1.0 - rho * re, -rho * im);
                    let den = dr * dr + di * di;
                    t += (re * dr + im * di) / den;
                }
                Ok(t)
            }
            Spectrum::Dense(a) => {
                let n = a.nrows();
                let b = DMatrix::identity(n, n) - a * rho;
                let m = b.lu().solve(a).ok_or_else(|| {
                    Error::FactorizationFailure(format!("I - rho A is singular at rho = {rho}"))
                })?;
                Ok(m.trace())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_rownorm(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::from_fn(n, n, |i, j| {
            if i != j && rng.gen::<f64>() < 0.3 { 1.0 } else { 0.0 }
        });
        for i in 0..n {
            let s: f64 = a.row(i).sum();
            if s > 0.0 {
                for j in 0..n {
                    a[(i, j)] /= s;
                }
            }
        }
        a
    }

    #[test]
    fn spectrum_matches_dense_log_det_and_trace() {
        for seed in 0..5 {
            let a = random_rownorm(12, seed);
            let spec = Spectrum::new(&a, 0.5);
            assert!(matches!(spec, Spectrum::Eigen(_)));
            let dense = Spectrum::Dense(a.clone());
            for &rho in &[-0.7, -0.2, 0.0, 0.3, 0.8] {
                let x = spec.log_det_i_minus(rho).unwrap();
                let y = dense.log_det_i_minus(rho).unwrap();
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
                let tx = spec.trace_am(rho).unwrap();
                let ty = dense.trace_am(rho).unwrap();
                assert!((tx - ty).abs() < 1e-9, "{tx} vs {ty}");
            }
        }
    }

    #[test]
    fn nilpotent_chain() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let spec = Spectrum::new(&a, 0.5);
        assert!(spec.log_det_i_minus(0.7).unwrap().abs() < 1e-12);
        assert!(spec.trace_am(0.7).unwrap().abs() < 1e-12);
    }

    #[test]
    fn factor_log_det() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = Factor::new(m.clone(), "m").unwrap();
        assert!((f.log_det() - 11f64.ln()).abs() < 1e-14);
        assert!(Factor::new(-m, "neg").is_err());
    }
}
