//! Matrix-normal summary `MN(Λ, Ω, Ψ)` of latent draws.
//!
//! Λ is the draw mean. Ω and Ψ come from alternating ("flip-flop") maximum
//! likelihood updates with the identifiability constraint `Ω[0,0] = 1`
//! imposed inside the Ω update:
//!
//! 1. `S = Σ_k E_k Ψ⁻¹ E_kᵀ` with `E_k = U_k - Λ`;
//! 2. `S ← S / S₁₁`;
//! 3. `S₋₁,₋₁ ← (S₁₁/KD) S₋₁,₋₁ + (1 - S₁₁/KD) S₋₁,₁ S₋₁,₁ᵀ`.
//!
//! `S₁₁` in step 3 is read as the value from step 1 by default, which makes
//! the update the exact constrained maximizer given Ψ. [`S11Reading::Post`]
//! uses the literal post-division value (`1`) instead.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::LatentDraws;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Factor};

const PD_FLOOR: f64 = 1e-10;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum S11Reading {
    Pre,
    Post,
}

impl std::str::FromStr for S11Reading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" => Ok(S11Reading::Pre),
            "post" => Ok(S11Reading::Post),
            other => Err(Error::InvalidInput(format!("omega_update_s11 must be pre or post, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixNormalOptions {
    pub s11_reading: S11Reading,
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Rescale Ψ before each Ω update so that the first node's spread `S₁₁`
    /// equals `KD`. The likelihood is invariant under `(cΩ, Ψ/c)`, so this
    /// only moves the scale onto Ψ, but it removes a slow mode of the
    /// constrained coordinate ascent whose rate is about `(n - 1) / n` per
    /// iteration. Under the `pre` reading the Ω update then equals the
    /// unconstrained update normalized to `Ω[0,0] = 1`.
    pub rescale_psi: bool,
}

impl Default for MatrixNormalOptions {
    fn default() -> Self {
        Self { s11_reading: S11Reading::Pre, rel_tol: 1e-8, max_iters: 500, rescale_psi: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixNormalApprox {
    pub lambda: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub fit_loglik: f64,
    pub iterations: usize,
    /// Log likelihood after every half-step (Ω update, then Ψ update).
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub ridge_applied: bool,
}

impl MatrixNormalApprox {
    pub fn n(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn dim(&self) -> usize {
        self.lambda.ncols()
    }

    /// Approximation built from a known location and covariances, for callers
    /// that already hold a matrix-normal summary.
    pub fn from_parts(lambda: DMatrix<f64>, omega: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self> {
        let (n, d) = lambda.shape();
        if omega.shape() != (n, n) || psi.shape() != (d, d) {
            return Err(Error::BadShape(format!(
                "Lambda {n}x{d} needs Omega {n}x{n} and Psi {d}x{d}"
            )));
        }
        Factor::new(omega.clone(), "Omega")?;
        Factor::new(psi.clone(), "Psi")?;
        Ok(Self {
            lambda,
            omega,
            psi,
            fit_loglik: f64::NAN,
            iterations: 0,
            loglik_trace: Vec::new(),
            converged: true,
            ridge_applied: false,
        })
    }
}

pub fn fit_matrix_normal(draws: &LatentDraws) -> Result<MatrixNormalApprox> {
    fit_matrix_normal_with(draws, &MatrixNormalOptions::default())
}

pub fn fit_matrix_normal_with(
    draws: &LatentDraws,
    opts: &MatrixNormalOptions,
) -> Result<MatrixNormalApprox> {
    let d = draws.dim();
    let k = draws.len();
    if k * d <= 1 {
        return Err(Error::InvalidInput("need K*D > 1 for the matrix-normal fit".into()));
    }
    if !draws.aligned() {
        log::debug!("fitting matrix normal to draws that were not Procrustes-aligned");
    }
    let lambda = draws.mean();
    let centered: Vec<DMatrix<f64>> = draws.draws().iter().map(|u| u - &lambda).collect();
    if centered.iter().all(|e| e.iter().all(|&v| v == 0.0)) {
        return Err(Error::DegenerateDraws);
    }

    let mut ridge = RidgeLog::default();
    let mut psi = DMatrix::<f64>::identity(d, d);
    let mut omega;
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        iterations += 1;
        if opts.rescale_psi {
            psi *= first_row_spread(&centered, &psi)? / (k * d) as f64;
        }
        omega = update_omega(&centered, &psi, opts.s11_reading)?;
        let (om, ps) = repair(omega, psi.clone(), &mut ridge)?;
        omega = om;
        psi = ps;
        trace.push(matrix_normal_loglik_centered(&centered, &omega, &psi)?);

        psi = update_psi(&centered, &omega)?;
        let (om, ps) = repair(omega, psi, &mut ridge)?;
        omega = om;
        psi = ps;
        let ll = matrix_normal_loglik_centered(&centered, &omega, &psi)?;
        trace.push(ll);
        if !ll.is_finite() {
            return Err(Error::NonFinite("matrix-normal log likelihood".into()));
        }
        if (ll - prev).abs() < opts.rel_tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        prev = ll;
    }
    let fit_loglik = *trace.last().expect("at least one iteration");
    Ok(MatrixNormalApprox {
        lambda,
        omega,
        psi,
        fit_loglik,
        iterations,
        loglik_trace: trace,
        converged,
        ridge_applied: ridge.omega || ridge.psi,
    })
}

/// Matrix-normal log likelihood of the draws at `(Λ, Ω, Ψ)`.
pub fn matrix_normal_loglik(
    draws: &LatentDraws,
    lambda: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    psi: &DMatrix<f64>,
) -> Result<f64> {
    let centered: Vec<DMatrix<f64>> = draws.draws().iter().map(|u| u - lambda).collect();
    matrix_normal_loglik_centered(&centered, omega, psi)
}

/// Number of row directions the draws cannot vary in: 1 when every centered
/// draw has zero column sums (translation-aligned draws), else 0.
fn row_deficit(centered: &[DMatrix<f64>]) -> usize {
    let n = centered[0].nrows() as f64;
    let centered_rows = centered.iter().all(|e| {
        e.column_iter().all(|c| c.sum().abs() <= 1e-9 * n.sqrt() * c.norm().max(f64::MIN_POSITIVE))
    });
    usize::from(centered_rows)
}

/// With a row deficit `r` the draws live on an `(n - r)`-dimensional row
/// subspace; the density there uses the pseudo-determinant of Ω (its `r`
/// smallest eigenvalues, which only carry the ridge, are dropped) and
/// `n - r` rows in the Ψ and normalizing terms.
fn matrix_normal_loglik_centered(
    centered: &[DMatrix<f64>],
    omega: &DMatrix<f64>,
    psi: &DMatrix<f64>,
) -> Result<f64> {
    let (n, d) = centered[0].shape();
    let r = row_deficit(centered);
    let k = centered.len() as f64;
    let fo = Factor::new(omega.clone(), "Omega")?;
    let fp = Factor::new(psi.clone(), "Psi")?;
    let t = sum_quadratic(centered, &fo);
    let quad = fp.solve_mat(&t).trace();
    let log_det_omega = if r == 0 {
        fo.log_det()
    } else {
        let mut ev: Vec<f64> = SymmetricEigen::new(omega.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev[r..].iter().map(|v| v.ln()).sum()
    };
    let (nf, df) = ((n - r) as f64, d as f64);
    Ok(-0.5 * k * nf * df * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * k * df * log_det_omega
        - 0.5 * k * nf * fp.log_det()
        - 0.5 * quad)
}

/// `Σ_k E_kᵀ Ω⁻¹ E_k`.
fn sum_quadratic(centered: &[DMatrix<f64>], omega: &Factor) -> DMatrix<f64> {
    let d = centered[0].ncols();
    let mut t = DMatrix::zeros(d, d);
    for e in centered {
        t += e.transpose() * omega.solve_mat(e);
    }
    symmetrize(&mut t);
    t
}

/// `S₁₁ = Σ_k e_kᵀ Ψ⁻¹ e_k` over the first rows `e_k` of the centered draws.
fn first_row_spread(centered: &[DMatrix<f64>], psi: &DMatrix<f64>) -> Result<f64> {
    let fp = Factor::new(psi.clone(), "Psi")?;
    let s11: f64 = centered
        .iter()
        .map(|e| {
            let r = e.row(0).transpose();
            r.dot(&fp.solve(&r))
        })
        .sum();
    if !(s11 > 0.0) {
        return Err(Error::NotPositiveDefinite {
            which: "Omega (first node has zero spread)".into(),
            min_eigenvalue: s11,
        });
    }
    Ok(s11)
}

fn update_omega(centered: &[DMatrix<f64>], psi: &DMatrix<f64>, reading: S11Reading) -> Result<DMatrix<f64>> {
    let (n, d) = centered[0].shape();
    let kd = (centered.len() * d) as f64;
    let psi_inv = Factor::new(psi.clone(), "Psi")?.solve_mat(&DMatrix::identity(d, d));
    let mut s = DMatrix::zeros(n, n);
    for e in centered {
        s += e * &psi_inv * e.transpose();
    }
    symmetrize(&mut s);
    let s11 = s[(0, 0)];
    if !(s11 > 0.0) {
        return Err(Error::NotPositiveDefinite {
            which: "Omega (first node has zero spread)".into(),
            min_eigenvalue: s11,
        });
    }
    s /= s11;
    let w = match reading {
        S11Reading::Pre => s11 / kd,
        S11Reading::Post => 1.0 / kd,
    };
    let col = s.view((1, 0), (n - 1, 1)).into_owned();
    let outer = &col * col.transpose();
    let block = s.view((1, 1), (n - 1, n - 1)) * w + outer * (1.0 - w);
    s.view_mut((1, 1), (n - 1, n - 1)).copy_from(&block);
    Ok(s)
}

fn update_psi(centered: &[DMatrix<f64>], omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = centered[0].nrows() - row_deficit(centered);
    let kn = (centered.len() * n) as f64;
    let fo = Factor::new(omega.clone(), "Omega").map_err(|_| Error::NotPositiveDefinite {
        which: "Omega".into(),
        min_eigenvalue: min_eig(omega),
    })?;
    Ok(sum_quadratic(centered, &fo) / kn)
}

/// Which matrices needed a ridge at some iterate.
#[derive(Default)]
struct RidgeLog {
    omega: bool,
    psi: bool,
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Adds `RIDGE·I` to an iterate whose minimum eigenvalue is below the floor
/// and fails if one ridge does not restore it. Ω is rescaled back to
/// `Ω[0,0] = 1` with the compensating factor moved into Ψ.
///
/// Translation alignment makes every centered draw orthogonal to the ones
/// vector, so Ω iterates of aligned draws are singular along it and take
/// the ridge at every step; that direction never enters the quadratic forms.
fn repair(
    mut omega: DMatrix<f64>,
    mut psi: DMatrix<f64>,
    log: &mut RidgeLog,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(min_eig(&omega) >= PD_FLOOR) {
        log.omega = true;
        let n = omega.nrows();
        omega += DMatrix::identity(n, n) * RIDGE;
        let c = omega[(0, 0)];
        omega /= c;
        psi *= c;
        let lo = min_eig(&omega);
        if !(lo >= PD_FLOOR) {
            return Err(Error::NotPositiveDefinite { which: "Omega".into(), min_eigenvalue: lo });
        }
    }
    if !(min_eig(&psi) >= PD_FLOOR) {
        log.psi = true;
        let d = psi.nrows();
        psi += DMatrix::identity(d, d) * RIDGE;
        let lp = min_eig(&psi);
        if !(lp >= PD_FLOOR) {
            return Err(Error::NotPositiveDefinite { which: "Psi".into(), min_eigenvalue: lp });
        }
    }
    Ok((omega, psi))
}
