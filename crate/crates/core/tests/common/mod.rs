#![allow(dead_code)]

use std::sync::Arc;

use hanam::latent::MatrixNormalApprox;
use hanam::model::{Dataset, ModelFamily, ModelKind, ParamVector};
use hanam::net::{row_normalize, Adjacency, RowNormalizedNetwork};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Directed network where every node sends 1 to 4 edges at random.
pub fn random_network(n: usize, rng: &mut ChaCha8Rng) -> RowNormalizedNetwork {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for _ in 0..rng.gen_range(1..=4) {
            let j = rng.gen_range(0..n);
            if j != i {
                m[(i, j)] = 1.0;
            }
        }
    }
    row_normalize(&Adjacency::new(m).unwrap())
}

/// Intercept plus `p - 1` standard normal columns.
pub fn random_design(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { normal(rng) })
}

pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| normal(rng));
    &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
}

/// Random summary with `Ω[0,0] = 1`.
pub fn random_latent(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Arc<MatrixNormalApprox> {
    let lambda = DMatrix::from_fn(n, d, |_, _| normal(rng));
    let mut omega = random_spd(n, rng);
    omega /= omega[(0, 0)];
    let psi = random_spd(d, rng) * 0.5;
    Arc::new(MatrixNormalApprox::from_parts(lambda, omega, psi).unwrap())
}

pub fn random_dataset(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let x = random_design(n, p, rng);
    let y = DVector::from_fn(n, |_, _| 1.0 + 2.0 * normal(rng));
    Dataset::unnamed(y, x).unwrap()
}

pub fn family(kind: ModelKind, latent: &Arc<MatrixNormalApprox>) -> ModelFamily {
    ModelFamily::new(kind, kind.has_latent().then(|| latent.clone())).unwrap()
}

/// Parameter point with `|ρ|` at most 90% of the stability limit.
pub fn random_theta(p: usize, d: usize, network: &RowNormalizedNetwork, rng: &mut ChaCha8Rng) -> ParamVector {
    let lim = 0.9 / network.spectral_norm().unwrap();
    ParamVector {
        beta: (0..p).map(|_| normal(rng)).collect(),
        gamma: (0..d).map(|_| 0.5 * normal(rng)).collect(),
        rho: rng.gen_range(-lim..lim).clamp(-0.95, 0.95),
        sigma2: rng.gen_range(0.3..3.0),
    }
}

/// Mean and covariance of `y` under `kind`, assembled densely.
pub fn dense_moments(
    kind: ModelKind,
    theta: &ParamVector,
    x: &DMatrix<f64>,
    network: &RowNormalizedNetwork,
    latent: Option<&MatrixNormalApprox>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let m = (&eye - network.matrix() * theta.rho).try_inverse().unwrap();
    let xb = x * DVector::from_column_slice(&theta.beta);
    let (lg, g_omega) = match latent {
        Some(l) if kind.has_latent() => {
            let gamma = DVector::from_column_slice(&theta.gamma);
            let g = (gamma.transpose() * &l.psi * &gamma)[(0, 0)];
            (&l.lambda * gamma, &l.omega * g)
        }
        _ => (DVector::zeros(n), DMatrix::zeros(n, n)),
    };
    let mmt = &m * m.transpose();
    match kind {
        ModelKind::Hane => (&m * (lg + xb), &m * (g_omega + &eye * theta.sigma2) * m.transpose()),
        ModelKind::Hand => (lg + xb, g_omega + mmt * theta.sigma2),
        ModelKind::NamEffects => (&m * xb, mmt * theta.sigma2),
        ModelKind::NamDisturbances => (xb, mmt * theta.sigma2),
    }
}

/// Gaussian log density with the determinant taken from an LU product of pivots.
pub fn dense_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let lu = cov.clone().lu();
    let det = lu.determinant();
    assert!(det > 0.0, "covariance determinant {det}");
    let r = y - mean;
    let q = r.dot(&lu.solve(&r).unwrap());
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + det.ln() + q)
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Drops γ for families without a latent term.
pub fn for_kind(theta: &ParamVector, kind: ModelKind) -> ParamVector {
    let gamma = if kind.has_latent() { theta.gamma.clone() } else { Vec::new() };
    ParamVector { gamma, ..theta.clone() }
}

/// `y = M(Xβ + ε)` with `ε ~ N(0, σ²I)`.
pub fn nam_effects_outcome(
    network: &RowNormalizedNetwork,
    x: &DMatrix<f64>,
    beta: &[f64],
    rho: f64,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let n = x.nrows();
    let eps = DVector::from_fn(n, |_, _| sigma2.sqrt() * normal(rng));
    let rhs = x * DVector::from_column_slice(beta) + eps;
    (DMatrix::identity(n, n) - network.matrix() * rho).lu().solve(&rhs).unwrap()
}
