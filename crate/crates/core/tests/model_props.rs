mod common;

use common::*;
use hanam::model::{log_posterior, nam_loglik, EvalContext, ModelFamily, ModelKind, ParamVector, Priors};
use hanam::net::{row_normalize, Adjacency};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, InverseGamma, Normal};

const KINDS: [ModelKind; 4] = [ModelKind::Hane, ModelKind::Hand, ModelKind::NamEffects, ModelKind::NamDisturbances];

#[test]
fn loglik_matches_dense_gaussian_for_every_family() {
    for seed in 0..6 {
        let mut r = rng(seed);
        let n = 4 + seed as usize;
        let net = random_network(n, &mut r);
        let data = random_dataset(n, 3, &mut r);
        let latent = random_latent(n, 2, &mut r);
        let theta = random_theta(3, 2, &net, &mut r);
        for kind in KINDS {
            let fam = family(kind, &latent);
            let theta = for_kind(&theta, kind);
            let ev = EvalContext::new(&fam, &data, &net, &Priors::default()).unwrap().evaluate(&theta, false).unwrap();
            let (mean, cov) = dense_moments(kind, &theta, &data.x, &net, Some(&latent));
            let oracle = dense_logpdf(&data.y, &mean, &cov);
            assert!(rel_err(ev.loglik, oracle) < 1e-10, "{kind} n={n}: {} vs {oracle}", ev.loglik);
            assert!((ev.log_post - ev.loglik - ev.log_prior).abs() < 1e-12);
        }
    }
}

#[test]
fn nam_loglik_is_the_prior_free_part() {
    let mut r = rng(40);
    let net = random_network(5, &mut r);
    let data = random_dataset(5, 2, &mut r);
    let latent = random_latent(5, 1, &mut r);
    let theta = random_theta(2, 0, &net, &mut r);
    for kind in [ModelKind::NamEffects, ModelKind::NamDisturbances] {
        let ll = nam_loglik(&theta.beta, theta.rho, theta.sigma2, &data, &net, kind).unwrap();
        let (mean, cov) = dense_moments(kind, &theta, &data.x, &net, None);
        assert!(rel_err(ll, dense_logpdf(&data.y, &mean, &cov)) < 1e-10);
        let lp = log_posterior(&theta, &family(kind, &latent), &data, &net, &Priors::default()).unwrap();
        let fam = family(kind, &latent);
        let ctx = EvalContext::new(&fam, &data, &net, &Priors::default()).unwrap();
        assert!((lp - ll - ctx.evaluate(&theta, false).unwrap().log_prior).abs() < 1e-12);
    }
    assert!(nam_loglik(&theta.beta, theta.rho, theta.sigma2, &data, &net, ModelKind::Hane).is_err());
}

#[test]
fn prior_differences_match_independent_densities() {
    let mut r = rng(41);
    let net = random_network(6, &mut r);
    let data = random_dataset(6, 2, &mut r);
    let latent = random_latent(6, 2, &mut r);
    let pr = Priors::default();
    let nb = Normal::new(0.0, pr.sigma_beta).unwrap();
    let ng = Normal::new(0.0, pr.sigma_gamma).unwrap();
    let nr = Normal::new(pr.mu_rho, pr.sigma_rho).unwrap();
    let ig = InverseGamma::new(pr.a / 2.0, pr.b / 2.0).unwrap();
    let oracle = |t: &ParamVector, latent: bool| {
        let mut v = t.beta.iter().map(|b| nb.ln_pdf(*b)).sum::<f64>() + nr.ln_pdf(t.rho) + ig.ln_pdf(t.sigma2);
        if latent {
            v += t.gamma.iter().map(|g| ng.ln_pdf(*g)).sum::<f64>();
        }
        v
    };
    for kind in KINDS {
        let fam = family(kind, &latent);
        let ctx = EvalContext::new(&fam, &data, &net, &pr).unwrap();
        let d = if kind.has_latent() { 2 } else { 0 };
        let a = random_theta(2, d, &net, &mut r);
        let b = random_theta(2, d, &net, &mut r);
        let got = ctx.evaluate(&a, false).unwrap().log_prior - ctx.evaluate(&b, false).unwrap().log_prior;
        let want = oracle(&a, kind.has_latent()) - oracle(&b, kind.has_latent());
        assert!((got - want).abs() < 1e-10, "{kind}: {got} vs {want}");
    }
}

#[test]
fn scalar_density_at_zero_influence() {
    let mut r = rng(42);
    let n = 7;
    let net = random_network(n, &mut r);
    let data = random_dataset(n, 2, &mut r);
    let latent = random_latent(n, 2, &mut r);
    let theta = ParamVector { beta: vec![0.4, -1.1], gamma: vec![0.0, 0.0], rho: 0.0, sigma2: 1.7 };
    let sd = Normal::new(0.0, theta.sigma2.sqrt()).unwrap();
    let oracle: f64 = (0..n)
        .map(|i| sd.ln_pdf(data.y[i] - 0.4 * data.x[(i, 0)] + 1.1 * data.x[(i, 1)]))
        .sum();
    for kind in KINDS {
        let ev = EvalContext::new(&family(kind, &latent), &data, &net, &Priors::default())
            .unwrap()
            .evaluate(&for_kind(&theta, kind), false)
            .unwrap();
        assert!((ev.loglik - oracle).abs() < 1e-10, "{kind}");
    }
}

#[test]
fn families_reduce_when_homophily_vanishes() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let n = 12;
        let net = random_network(n, &mut r);
        let data = random_dataset(n, 3, &mut r);
        let latent = random_latent(n, 3, &mut r);
        let mut theta = random_theta(3, 3, &net, &mut r);
        theta.gamma = vec![0.0; 3];
        let nam_theta = ParamVector { gamma: vec![], ..theta.clone() };
        for (ha, na) in [(ModelKind::Hane, ModelKind::NamEffects), (ModelKind::Hand, ModelKind::NamDisturbances)] {
            let fam_h = family(ha, &latent);
            let a = EvalContext::new(&fam_h, &data, &net, &Priors::default()).unwrap();
            let fam_n = family(na, &latent);
            let b = EvalContext::new(&fam_n, &data, &net, &Priors::default()).unwrap();
            let ea = a.evaluate(&theta, true).unwrap();
            let eb = b.evaluate(&nam_theta, true).unwrap();
            assert!((ea.loglik - eb.loglik).abs() < 1e-10, "{ha}");
            let (ga, gb) = (ea.loglik_grad.unwrap(), eb.loglik_grad.unwrap());
            for (x, y) in ga.beta.iter().zip(&gb.beta) {
                assert!(rel_err(*x, *y) < 1e-9);
            }
            assert!(rel_err(ga.rho, gb.rho) < 1e-9 && rel_err(ga.sigma2, gb.sigma2) < 1e-9);
        }
        // At ρ = 0 the effects and disturbance forms coincide.
        let zero = ParamVector { rho: 0.0, ..theta.clone() };
        let e = |k| {
            EvalContext::new(&family(k, &latent), &data, &net, &Priors::default())
                .unwrap()
                .evaluate(&zero, false)
                .unwrap()
                .loglik
        };
        let mut gz = zero.clone();
        gz.gamma = vec![0.3, -0.2, 0.5];
        let h = |k| {
            EvalContext::new(&family(k, &latent), &data, &net, &Priors::default())
                .unwrap()
                .evaluate(&gz, false)
                .unwrap()
                .loglik
        };
        assert!((e(ModelKind::Hane) - e(ModelKind::Hand)).abs() < 1e-10);
        assert!((h(ModelKind::Hane) - h(ModelKind::Hand)).abs() < 1e-10);
    }
}

#[test]
fn latent_rotation_leaves_the_density_unchanged() {
    let mut r = rng(7);
    let n = 10;
    let net = random_network(n, &mut r);
    let data = random_dataset(n, 2, &mut r);
    let latent = random_latent(n, 3, &mut r);
    let theta = random_theta(2, 3, &net, &mut r);
    let q = DMatrix::from_fn(3, 3, |_, _| normal(&mut r)).qr().q();
    let rotated = std::sync::Arc::new(
        hanam::latent::MatrixNormalApprox::from_parts(
            &latent.lambda * &q,
            latent.omega.clone(),
            q.transpose() * &latent.psi * &q,
        )
        .unwrap(),
    );
    let rtheta = ParamVector { gamma: (q.transpose() * DVector::from_column_slice(&theta.gamma)).as_slice().to_vec(), ..theta.clone() };
    for kind in [ModelKind::Hane, ModelKind::Hand] {
        let fam_a = family(kind, &latent);
        let a = EvalContext::new(&fam_a, &data, &net, &Priors::default()).unwrap();
        let fam_b = family(kind, &rotated);
        let b = EvalContext::new(&fam_b, &data, &net, &Priors::default()).unwrap();
        let (ea, eb) = (a.evaluate(&theta, false).unwrap(), b.evaluate(&rtheta, false).unwrap());
        assert!((ea.loglik - eb.loglik).abs() < 1e-9, "{kind}");
        assert!((ea.log_prior - eb.log_prior).abs() < 1e-12, "{kind}");
    }
}

#[test]
fn nilpotent_chain_has_flat_influence_direction() {
    let adj = Adjacency::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
    let net = row_normalize(&adj);
    let data =
        hanam::model::Dataset::unnamed(DVector::from_vec(vec![0.7, -0.4]), DMatrix::from_element(2, 1, 1.0)).unwrap();
    let fam = ModelFamily::nam_disturbances();
    let ctx = EvalContext::new(&fam, &data, &net, &Priors::flat()).unwrap();
    let ll = |rho: f64| {
        ctx.evaluate(&ParamVector { beta: vec![0.1], gamma: vec![], rho, sigma2: 1.0 }, true).unwrap()
    };
    // det(I - ρA) = 1 for every ρ, but the residual still depends on ρ.
    let (a, b) = (ll(0.0), ll(0.5));
    let (mean, cov) = dense_moments(
        ModelKind::NamDisturbances,
        &ParamVector { beta: vec![0.1], gamma: vec![], rho: 0.5, sigma2: 1.0 },
        &data.x,
        &net,
        None,
    );
    assert!((b.loglik - dense_logpdf(&data.y, &mean, &cov)).abs() < 1e-12);
    assert!(a.loglik_grad.unwrap().rho.is_finite());
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..8 {
        let mut r = rng(500 + seed);
        let n = 15;
        let net = random_network(n, &mut r);
        let data = random_dataset(n, 3, &mut r);
        let latent = random_latent(n, 2, &mut r);
        for kind in KINDS {
            let d = if kind.has_latent() { 2 } else { 0 };
            let theta = random_theta(3, d, &net, &mut r);
            let fam = family(kind, &latent);
            let ctx = EvalContext::new(&fam, &data, &net, &Priors::default()).unwrap();
            let g = ctx.evaluate(&theta, true).unwrap().grad.unwrap().to_vec();
            let base: Vec<f64> = theta.beta.iter().chain(&theta.gamma).copied().chain([theta.rho, theta.sigma2]).collect();
            let at = |v: &[f64]| ParamVector {
                beta: v[..3].to_vec(),
                gamma: v[3..3 + d].to_vec(),
                rho: v[3 + d],
                sigma2: v[4 + d],
            };
            for j in 0..base.len() {
                let h = 1e-6 * base[j].abs().max(1.0);
                let (mut up, mut dn) = (base.clone(), base.clone());
                up[j] += h;
                dn[j] -= h;
                let fd = (ctx.evaluate(&at(&up), false).unwrap().log_post
                    - ctx.evaluate(&at(&dn), false).unwrap().log_post)
                    / (2.0 * h);
                assert!(rel_err(g[j], fd) < 1e-5, "{kind} seed {seed} coord {j}: {} vs {fd}", g[j]);
            }
        }
    }
}

#[test]
fn unstable_influence_is_rejected() {
    let mut r = rng(9);
    let net = random_network(6, &mut r);
    let data = random_dataset(6, 1, &mut r);
    let fam = ModelFamily::nam_effects();
    let ctx = EvalContext::new(&fam, &data, &net, &Priors::default()).unwrap();
    let theta = ParamVector { beta: vec![0.0], gamma: vec![], rho: 1.2 / net.spectral_norm().unwrap(), sigma2: 1.0 };
    assert!(ctx.evaluate(&theta, false).is_err());
}
