use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Dataset, ModelFamily, ModelKind, ParamVector, Priors};
use crate::error::{Error, Result};
use crate::latent::MatrixNormalApprox;
use crate::linalg::{Factor, Spectrum};
use crate::net::RowNormalizedNetwork;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gradient of the log posterior on the natural `(β, γ, ρ, σ²)` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
}

impl Gradient {
    /// Flattened in internal order with the σ² component left on the σ² scale.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.beta.iter().chain(&self.gamma).copied().collect();
        v.push(self.rho);
        v.push(self.sigma2);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_post: f64,
    pub loglik: f64,
    pub log_prior: f64,
    /// Gradient of the log posterior.
    pub grad: Option<Gradient>,
    /// Gradient of the log likelihood alone.
    pub loglik_grad: Option<Gradient>,
}

/// Per-model caches that do not depend on θ.
enum Cache {
    /// HANE and NAM effects: the covariance `gΩ + σ²I` is diagonal in Ω's
    /// eigenbasis, so everything is projected onto it once.
    Effects {
        omega_eig: Vec<f64>,
        y: DVector<f64>,
        ay: DVector<f64>,
        x: DMatrix<f64>,
        lambda: DMatrix<f64>,
    },
    /// NAM disturbances: `Σ⁻¹ = BᵀB/σ²` with `B = I - ρA`.
    NamDisturbances { ay: DVector<f64>, ax: DMatrix<f64> },
    /// HAND: dense factorization of `gΩ + σ²MMᵀ` at every θ.
    Hand,
}

/// Evaluation context for one (family, data, network, priors) combination.
pub struct EvalContext<'a> {
    kind: ModelKind,
    data: &'a Dataset,
    network: &'a RowNormalizedNetwork,
    priors: Priors,
    latent: Option<&'a MatrixNormalApprox>,
    norm: f64,
    spectrum: Option<&'a Spectrum>,
    cache: Cache,
}

impl<'a> EvalContext<'a> {
    pub fn new(
        family: &'a ModelFamily,
        data: &'a Dataset,
        network: &'a RowNormalizedNetwork,
        priors: &Priors,
    ) -> Result<Self> {
        priors.validate()?;
        let n = network.n();
        if data.n() != n {
            return Err(Error::BadShape(format!("dataset has {} rows, network {} nodes", data.n(), n)));
        }
        let latent = family.latent();
        if let Some(l) = latent {
            if l.n() != n {
                return Err(Error::BadShape(format!("latent Lambda has {} rows for {n} nodes", l.n())));
            }
        }
        let norm = network.spectral_norm()?;
        let a = network.matrix();
        let kind = family.kind();
        let (cache, spectrum) = match kind {
            ModelKind::Hane | ModelKind::NamEffects => {
                let ay = a * &data.y;
                let cache = match latent {
                    Some(l) => {
                        let eig = SymmetricEigen::new(l.omega.clone());
                        let qt = eig.eigenvectors.transpose();
                        Cache::Effects {
                            omega_eig: eig.eigenvalues.iter().copied().collect(),
                            y: &qt * &data.y,
                            ay: &qt * ay,
                            x: &qt * &data.x,
                            lambda: &qt * &l.lambda,
                        }
                    }
                    None => Cache::Effects {
                        omega_eig: vec![0.0; n],
                        y: data.y.clone(),
                        ay,
                        x: data.x.clone(),
                        lambda: DMatrix::zeros(n, 0),
                    },
                };
                (cache, Some(network.spectrum()))
            }
            ModelKind::NamDisturbances => (
                Cache::NamDisturbances { ay: a * &data.y, ax: a * &data.x },
                Some(network.spectrum()),
            ),
            ModelKind::Hand => (Cache::Hand, None),
        };
        Ok(Self { kind, data, network, priors: *priors, latent, norm, spectrum, cache })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.map_or(0, |l| l.dim())
    }

    /// Largest |ρ| passing the stability check (exclusive).
    pub fn rho_limit(&self) -> f64 {
        if self.norm > 0.0 { 1.0 / self.norm } else { f64::INFINITY }
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.beta.len() != self.p() || theta.gamma.len() != self.latent_dim() {
            return Err(Error::BadShape(format!(
                "theta has {} beta and {} gamma components; model needs {} and {}",
                theta.beta.len(),
                theta.gamma.len(),
                self.p(),
                self.latent_dim()
            )));
        }
        if !(theta.sigma2 > 0.0) || !theta.sigma2.is_finite() {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {}", theta.sigma2)));
        }
        if theta.beta.iter().chain(&theta.gamma).any(|v| !v.is_finite()) || !theta.rho.is_finite() {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let product = theta.rho.abs() * self.norm;
        if !(product < 1.0) {
            return Err(Error::Unstable { rho: theta.rho, product });
        }
        Ok(())
    }

    pub fn evaluate(&self, theta: &ParamVector, want_grad: bool) -> Result<Evaluation> {
        self.check(theta)?;
        let beta = DVector::from_column_slice(&theta.beta);
        let gamma = DVector::from_column_slice(&theta.gamma);
        let (loglik, grad) = match &self.cache {
            Cache::Effects { omega_eig, y, ay, x, lambda } => {
                self.effects(theta, &beta, &gamma, omega_eig, y, ay, x, lambda, want_grad)?
            }
            Cache::NamDisturbances { ay, ax } => {
                self.nam_disturbances(theta, &beta, ay, ax, want_grad)?
            }
            Cache::Hand => self.hand(theta, &beta, &gamma, want_grad)?,
        };
        let (log_prior, prior_grad) = self.prior(theta);
        let loglik_grad = grad.clone();
        let grad = grad.map(|mut g| {
            for (gi, pi) in g.beta.iter_mut().zip(&prior_grad.beta) {
                *gi += pi;
            }
            for (gi, pi) in g.gamma.iter_mut().zip(&prior_grad.gamma) {
                *gi += pi;
            }
            g.rho += prior_grad.rho;
            g.sigma2 += prior_grad.sigma2;
            g
        });
        let log_post = loglik + log_prior;
        if !log_post.is_finite() {
            return Err(Error::FactorizationFailure(format!("non-finite log posterior at {theta:?}")));
        }
        Ok(Evaluation { log_post, loglik, log_prior, grad, loglik_grad })
    }

    fn prior(&self, theta: &ParamVector) -> (f64, Gradient) {
        let p = &self.priors;
        let sb2 = p.sigma_beta * p.sigma_beta;
        let sg2 = p.sigma_gamma * p.sigma_gamma;
        let sr2 = p.sigma_rho * p.sigma_rho;
        let s2 = theta.sigma2;
        let mut lp = -theta.beta.iter().map(|b| b * b).sum::<f64>() / (2.0 * sb2);
        if self.kind.has_latent() {
            lp -= theta.gamma.iter().map(|g| g * g).sum::<f64>() / (2.0 * sg2);
        }
        lp -= (theta.rho - p.mu_rho).powi(2) / (2.0 * sr2);
        lp += (-p.a / 2.0 - 1.0) * s2.ln() - p.b / (2.0 * s2);
        let grad = Gradient {
            beta: theta.beta.iter().map(|b| -b / sb2).collect(),
            gamma: theta.gamma.iter().map(|g| -g / sg2).collect(),
            rho: -(theta.rho - p.mu_rho) / sr2,
            sigma2: -(p.a / 2.0 + 1.0) / s2 + p.b / (2.0 * s2 * s2),
        };
        (lp, grad)
    }

    /// `(g, Ψγ)`.
    fn latent_scale(&self, gamma: &DVector<f64>) -> (f64, DVector<f64>) {
        match self.latent {
            Some(l) => {
                let pg = &l.psi * gamma;
                (gamma.dot(&pg), pg)
            }
            None => (0.0, DVector::zeros(0)),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn effects(
        &self,
        theta: &ParamVector,
        beta: &DVector<f64>,
        gamma: &DVector<f64>,
        omega_eig: &[f64],
        y: &DVector<f64>,
        ay: &DVector<f64>,
        x: &DMatrix<f64>,
        lambda: &DMatrix<f64>,
        want_grad: bool,
    ) -> Result<(f64, Option<Gradient>)> {
        let n = y.len() as f64;
        let spectrum = self.spectrum.expect("effects models carry a spectrum");
        let (g, psi_gamma) = self.latent_scale(gamma);
        let mut r = y - ay * theta.rho - x * beta;
        if lambda.ncols() > 0 {
            r -= lambda * gamma;
        }
        let var: Vec<f64> = omega_eig.iter().map(|w| g * w + theta.sigma2).collect();
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::FactorizationFailure("effects covariance is not positive definite".into()));
        }
        let log_det: f64 = var.iter().map(|v| v.ln()).sum();
        let s = DVector::from_iterator(r.len(), r.iter().zip(&var).map(|(ri, v)| ri / v));
        let quad = r.dot(&s);
        let log_det_b = spectrum.log_det_i_minus(theta.rho)?;
        let loglik = -0.5 * n * LN_2PI - 0.5 * log_det + log_det_b - 0.5 * quad;
        if !want_grad {
            return Ok((loglik, None));
        }
        let gb = x.transpose() * &s;
        let tr_omega: f64 = omega_eig.iter().zip(&var).map(|(w, v)| w / v).sum();
        let quad_omega: f64 = omega_eig.iter().zip(s.iter()).map(|(w, si)| w * si * si).sum();
        let gg: Vec<f64> = (0..gamma.len())
            .map(|j| lambda.column(j).dot(&s) - psi_gamma[j] * tr_omega + psi_gamma[j] * quad_omega)
            .collect();
        let grho = -spectrum.trace_am(theta.rho)? + ay.dot(&s);
        let tr_inv: f64 = var.iter().map(|v| 1.0 / v).sum();
        let gs2 = -0.5 * tr_inv + 0.5 * s.norm_squared();
        Ok((loglik, Some(Gradient { beta: gb.iter().copied().collect(), gamma: gg, rho: grho, sigma2: gs2 })))
    }

    fn nam_disturbances(
        &self,
        theta: &ParamVector,
        beta: &DVector<f64>,
        ay: &DVector<f64>,
        ax: &DMatrix<f64>,
        want_grad: bool,
    ) -> Result<(f64, Option<Gradient>)> {
        let n = self.data.n() as f64;
        let spectrum = self.spectrum.expect("NAM disturbances carries a spectrum");
        let s2 = theta.sigma2;
        let rho = theta.rho;
        let r = &self.data.y - &self.data.x * beta;
        // B r = (y - ρAy) - (X - ρAX)β
        let br = (&self.data.y - ay * rho) - (&self.data.x - ax * rho) * beta;
        let log_det_b = spectrum.log_det_i_minus(rho)?;
        let rss = br.norm_squared();
        let loglik = -0.5 * n * LN_2PI - 0.5 * n * s2.ln() + log_det_b - 0.5 * rss / s2;
        if !want_grad {
            return Ok((loglik, None));
        }
        // Xᵀ Σ⁻¹ r = (BX)ᵀ (B r) / σ²
        let bx = &self.data.x - ax * rho;
        let gb = bx.transpose() * &br / s2;
        let ar = self.network.matrix() * &r;
        let grho = -spectrum.trace_am(rho)? + br.dot(&ar) / s2;
        let gs2 = -0.5 * n / s2 + 0.5 * rss / (s2 * s2);
        Ok((loglik, Some(Gradient { beta: gb.iter().copied().collect(), gamma: Vec::new(), rho: grho, sigma2: gs2 })))
    }

    fn hand(
        &self,
        theta: &ParamVector,
        beta: &DVector<f64>,
        gamma: &DVector<f64>,
        want_grad: bool,
    ) -> Result<(f64, Option<Gradient>)> {
        let latent = self.latent.expect("HAND carries a latent approximation");
        let n = self.data.n();
        let a = self.network.matrix();
        let b = DMatrix::identity(n, n) - a * theta.rho;
        let m = b
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::FactorizationFailure(format!("I - rho A singular at rho = {}", theta.rho)))?;
        let w = &m * m.transpose();
        let (g, psi_gamma) = self.latent_scale(gamma);
        let mut sigma = &latent.omega * g + &w * theta.sigma2;
        crate::linalg::symmetrize(&mut sigma);
        let factor = Factor::new(sigma, "HAND covariance")?;
        let r = &self.data.y - &latent.lambda * gamma - &self.data.x * beta;
        let s = factor.solve(&r);
        let quad = r.dot(&s);
        let loglik = -0.5 * n as f64 * LN_2PI - 0.5 * factor.log_det() - 0.5 * quad;
        if !want_grad {
            return Ok((loglik, None));
        }
        let gb = self.data.x.transpose() * &s;
        let tr_omega = factor.solve_mat(&latent.omega).trace();
        let quad_omega = s.dot(&(&latent.omega * &s));
        let gg: Vec<f64> = (0..gamma.len())
            .map(|j| latent.lambda.column(j).dot(&s) - psi_gamma[j] * tr_omega + psi_gamma[j] * quad_omega)
            .collect();
        // d(MMᵀ)/dρ = G + Gᵀ with G = M A M Mᵀ
        let gmat = &m * a * &w;
        let tr_g = factor.solve_mat(&gmat).trace();
        let quad_g = s.dot(&(&gmat * &s));
        let grho = theta.sigma2 * (quad_g - tr_g);
        let tr_w = factor.solve_mat(&w).trace();
        let quad_w = s.dot(&(&w * &s));
        let gs2 = -0.5 * tr_w + 0.5 * quad_w;
        Ok((loglik, Some(Gradient { beta: gb.iter().copied().collect(), gamma: gg, rho: grho, sigma2: gs2 })))
    }
}

pub fn log_posterior(
    theta: &ParamVector,
    family: &ModelFamily,
    data: &Dataset,
    network: &RowNormalizedNetwork,
    priors: &Priors,
) -> Result<f64> {
    Ok(EvalContext::new(family, data, network, priors)?.evaluate(theta, false)?.log_post)
}

pub fn grad_log_posterior(
    theta: &ParamVector,
    family: &ModelFamily,
    data: &Dataset,
    network: &RowNormalizedNetwork,
    priors: &Priors,
) -> Result<Gradient> {
    Ok(EvalContext::new(family, data, network, priors)?
        .evaluate(theta, true)?
        .grad
        .expect("gradient requested"))
}

/// Exact Gaussian log likelihood of a NAM (no priors).
pub fn nam_loglik(
    beta: &[f64],
    rho: f64,
    sigma2: f64,
    data: &Dataset,
    network: &RowNormalizedNetwork,
    kind: ModelKind,
) -> Result<f64> {
    let family = match kind {
        ModelKind::NamEffects => ModelFamily::nam_effects(),
        ModelKind::NamDisturbances => ModelFamily::nam_disturbances(),
        other => return Err(Error::InvalidInput(format!("nam_loglik needs a NAM family, got {other}"))),
    };
    let theta = ParamVector { beta: beta.to_vec(), gamma: Vec::new(), rho, sigma2 };
    let ctx = EvalContext::new(&family, data, network, &Priors::default())?;
    Ok(ctx.evaluate(&theta, false)?.loglik)
}
