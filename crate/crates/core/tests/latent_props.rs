mod common;

use common::*;
use hanam::latent::{
    alignment_spread, fit_matrix_normal, fit_matrix_normal_with, matrix_normal_loglik, procrustes_align,
    sample_latent_posterior, LatentDraws, LatentSamplerConfig, MatrixNormalOptions,
};
use hanam::net::{row_normalize, Adjacency};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

/// `K` draws of `Λ + A Z B` with `Ω = AAᵀ`, `Ψ = BᵀB`.
fn mn_draws(lambda: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize, r: &mut ChaCha8Rng) -> LatentDraws {
    let (n, d) = lambda.shape();
    let draws = (0..k).map(|_| lambda + a * DMatrix::from_fn(n, d, |_, _| normal(r)) * b).collect();
    LatentDraws::new(draws).unwrap()
}

#[test]
fn one_dimensional_fit_recovers_sample_covariance() {
    let mut r = rng(11);
    let (n, k) = (20, 500);
    let lambda = DMatrix::from_fn(n, 1, |_, _| normal(&mut r));
    let a = DMatrix::from_fn(n, n, |_, _| normal(&mut r) / (n as f64).sqrt()) + DMatrix::identity(n, n);
    let draws = mn_draws(&lambda, &a, &DMatrix::from_element(1, 1, 1.3), k, &mut r);

    let mean = draws.mean();
    let mut c = DMatrix::zeros(n, n);
    for u in draws.draws() {
        let e: DVector<f64> = (u - &mean).column(0).into_owned();
        c += &e * e.transpose();
    }
    c /= k as f64;

    let fit = fit_matrix_normal(&draws).unwrap();
    let implied = &fit.omega * fit.psi[(0, 0)];
    assert!((&implied - &c).amax() < 1e-6 * c.amax(), "{}", (&implied - &c).amax());
    assert!((&fit.lambda - &mean).amax() < 1e-12);
}

#[test]
fn fit_is_identified_and_monotone() {
    for seed in 0..5 {
        let mut r = rng(20 + seed);
        let (n, d) = (8, 3);
        let lambda = DMatrix::from_fn(n, d, |_, _| normal(&mut r));
        let a = random_spd(n, &mut r).cholesky().unwrap().l();
        let b = random_spd(d, &mut r).cholesky().unwrap().l().transpose();
        let draws = mn_draws(&lambda, &a, &b, 60, &mut r);
        let fit = fit_matrix_normal(&draws).unwrap();
        assert!(fit.converged);
        assert!((fit.omega[(0, 0)] - 1.0).abs() < 1e-12);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "seed {seed}: {} then {}", w[0], w[1]);
        }
        let ll = matrix_normal_loglik(&draws, &fit.lambda, &fit.omega, &fit.psi).unwrap();
        assert!((ll - fit.fit_loglik).abs() < 1e-8 * ll.abs());

        // Moving scale between the factors leaves the likelihood unchanged.
        let moved = matrix_normal_loglik(&draws, &fit.lambda, &(&fit.omega * 2.5), &(&fit.psi / 2.5)).unwrap();
        assert!((moved - ll).abs() < 1e-8 * ll.abs());
    }
}

#[test]
fn pre_reading_reaches_the_higher_likelihood() {
    let mut r = rng(31);
    let (n, d) = (6, 2);
    let lambda = DMatrix::from_fn(n, d, |_, _| normal(&mut r));
    let a = random_spd(n, &mut r).cholesky().unwrap().l();
    let draws = mn_draws(&lambda, &a, &DMatrix::identity(d, d), 80, &mut r);
    let pre = fit_matrix_normal(&draws).unwrap();
    let opts = MatrixNormalOptions { s11_reading: "post".parse().unwrap(), ..MatrixNormalOptions::default() };
    let post = fit_matrix_normal_with(&draws, &opts).unwrap();
    assert!(pre.fit_loglik > post.fit_loglik + 1.0, "{} vs {}", pre.fit_loglik, post.fit_loglik);
}

#[test]
fn rotating_draws_rotates_the_fit() {
    let mut r = rng(5);
    let (n, d) = (10, 3);
    let lambda = DMatrix::from_fn(n, d, |_, _| normal(&mut r));
    let a = random_spd(n, &mut r).cholesky().unwrap().l();
    let b = random_spd(d, &mut r).cholesky().unwrap().l().transpose();
    let draws = mn_draws(&lambda, &a, &b, 100, &mut r);
    let q = DMatrix::from_fn(d, d, |_, _| normal(&mut r)).qr().q();
    let rotated = LatentDraws::new(draws.draws().iter().map(|u| u * &q).collect()).unwrap();
    let (f, g) = (fit_matrix_normal(&draws).unwrap(), fit_matrix_normal(&rotated).unwrap());
    assert!((&f.lambda * &q - &g.lambda).amax() < 1e-8);
    assert!((&f.omega - &g.omega).amax() < 1e-8);
    assert!((q.transpose() * &f.psi * &q - &g.psi).amax() < 1e-8);
}

#[test]
fn alignment_is_rigid_and_reduces_spread() {
    let mut r = rng(8);
    let (n, d) = (12, 2);
    let base = DMatrix::from_fn(n, d, |_, _| normal(&mut r));
    let draws: Vec<DMatrix<f64>> = (0..30)
        .map(|_| {
            let q = DMatrix::from_fn(d, d, |_, _| normal(&mut r)).qr().q();
            let shift = DMatrix::from_fn(1, d, |_, _| 3.0 * normal(&mut r));
            let noise = DMatrix::from_fn(n, d, |_, _| 0.1 * normal(&mut r));
            (&base + noise) * q + DMatrix::from_fn(n, d, |_, j| shift[(0, j)])
        })
        .collect();
    let raw = LatentDraws::new(draws).unwrap();
    let aligned = procrustes_align(&raw).unwrap();
    assert!(aligned.aligned());
    assert!(alignment_spread(&aligned) < 0.05 * alignment_spread(&raw));
    let dist = |u: &DMatrix<f64>, i: usize, j: usize| (u.row(i) - u.row(j)).norm();
    for (u, v) in raw.draws().iter().zip(aligned.draws()) {
        for i in 0..n {
            for j in 0..i {
                assert!((dist(u, i, j) - dist(v, i, j)).abs() < 1e-10);
            }
        }
    }
}

fn sampler(n_draws: usize, seed: u64) -> LatentSamplerConfig {
    LatentSamplerConfig { dim: 2, burn_in: 500, thin: 20, n_draws, seed, ..LatentSamplerConfig::default() }
}

#[test]
fn linked_pair_is_pulled_together() {
    let net = row_normalize(&Adjacency::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
    let x = DMatrix::zeros(2, 0);
    let gap = |draws: &LatentDraws| {
        draws.draws().iter().map(|u| (u.row(0) - u.row(1)).norm_squared()).sum::<f64>() / draws.len() as f64
    };
    let posterior = sample_latent_posterior(&net, &x, &LatentSamplerConfig { fixed_intercept: Some(0.0), ..sampler(400, 1) }).unwrap();
    let prior = sample_latent_posterior(&net, &x, &LatentSamplerConfig { prior_only: true, ..sampler(400, 1) }).unwrap();
    assert!(gap(&posterior) < 0.5 * gap(&prior), "{} vs {}", gap(&posterior), gap(&prior));
}

#[test]
fn empty_network_with_negligible_tie_rate_samples_the_prior() {
    let net = row_normalize(&Adjacency::new(DMatrix::zeros(4, 4)).unwrap());
    let x = DMatrix::zeros(4, 0);
    let stat = |draws: &LatentDraws| -> Vec<f64> { draws.draws().iter().map(|u| u.row(0).norm_squared()).collect() };
    let a = stat(&sample_latent_posterior(&net, &x, &LatentSamplerConfig { fixed_intercept: Some(-30.0), ..sampler(600, 3) }).unwrap());
    let b = stat(&sample_latent_posterior(&net, &x, &LatentSamplerConfig { prior_only: true, ..sampler(600, 4) }).unwrap());
    let mv = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let ((ma, va), (mb, vb)) = (mv(&a), mv(&b));
    let z = (ma - mb) / (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    assert!(z.abs() < 2.576, "z = {z}");
    // Prior position scale is 3 per coordinate, so E|u|² = 2 · 9.
    assert!((mb - 18.0).abs() < 4.0, "{mb}");
}
