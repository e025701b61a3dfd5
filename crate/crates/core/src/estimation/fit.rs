use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use super::optimizer::{minimize, Bounds, LbfgsOptions};
use super::tsls::{init_2sls, stable_bounds};
use crate::error::{Error, Result};
use crate::model::{Dataset, EvalContext, ModelFamily, ModelKind, ParamVector, Priors};
use crate::net::RowNormalizedNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rho_bounds: (f64, f64),
    pub max_iters: usize,
    pub grad_tol: f64,
    pub history_size: usize,
    pub hessian_step: f64,
    /// Extra jittered restarts beyond the 2SLS start.
    pub multistart: usize,
    pub jitter_sd: f64,
    pub level: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rho_bounds: (-0.999, 0.999),
            max_iters: 500,
            grad_tol: 1e-6,
            history_size: 10,
            hessian_step: 1e-5,
            multistart: 2,
            jitter_sd: 0.1,
            level: 0.95,
            seed: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rho_bounds;
        if !(lo > -1.0 && hi < 1.0 && lo < hi) {
            return Err(Error::InvalidInput(format!("rho_bounds must lie strictly inside (-1, 1), got {:?}", self.rho_bounds)));
        }
        if !(self.grad_tol > 0.0 && self.hessian_step > 0.0 && self.jitter_sd >= 0.0) {
            return Err(Error::InvalidInput("tolerances and steps must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("interval level must be in (0, 1), got {}", self.level)));
        }
        if self.history_size == 0 || self.max_iters == 0 {
            return Err(Error::InvalidInput("history_size and max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// What the optimizer maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Log posterior plus `log σ²`: the posterior density of the internal
    /// coordinates `(β, γ, ρ, log σ²)`.
    Posterior,
    /// Log likelihood only (maximum likelihood baseline).
    Likelihood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_map: ParamVector,
    /// Log posterior (or log likelihood for MLE fits) at the estimate.
    pub log_post: f64,
    /// Maximized objective on the internal coordinates.
    pub objective_value: f64,
    pub objective: Objective,
    /// Observed negative Hessian of the objective on the internal coordinates.
    pub hessian: DMatrix<f64>,
    /// Intervals at `level`; empty when the Hessian is not positive definite.
    pub intervals: Vec<Interval>,
    pub interval_error: Option<String>,
    pub level: f64,
    pub converged: bool,
    pub n_iters: usize,
    pub projected_grad_norm: f64,
    /// Objective at every accepted iterate of the winning start.
    pub objective_trace: Vec<f64>,
    pub init_used: ParamVector,
    pub starts_failed: usize,
    pub rho_bounds: (f64, f64),
    pub family: ModelFamily,
    pub names: Vec<String>,
}

impl FitResult {
    pub fn kind(&self) -> ModelKind {
        self.family.kind()
    }

    pub fn interval(&self, name: &str) -> Option<&Interval> {
        self.intervals.iter().find(|i| i.name == name)
    }
}

fn internal_gradient(theta: &ParamVector, grad: &crate::model::Gradient, jacobian: bool) -> DVector<f64> {
    let mut v = grad.to_vec();
    let last = v.len() - 1;
    v[last] = theta.sigma2 * v[last] + if jacobian { 1.0 } else { 0.0 };
    DVector::from_vec(v)
}

/// Value and gradient of the maximized objective at internal coordinates `z`.
fn objective_at(ctx: &EvalContext<'_>, objective: Objective, z: &DVector<f64>) -> Result<(f64, DVector<f64>, f64)> {
    let theta = ParamVector::from_internal(z, ctx.p(), ctx.latent_dim());
    let ev = ctx.evaluate(&theta, true)?;
    let (value, reported, jac, grad) = match objective {
        Objective::Posterior => (ev.log_post + z[z.len() - 1], ev.log_post, true, &ev.grad),
        Objective::Likelihood => (ev.loglik, ev.loglik, false, &ev.loglik_grad),
    };
    let grad = grad.as_ref().expect("gradient requested");
    Ok((value, internal_gradient(&theta, grad, jac), reported))
}

/// Maximizes the log posterior of `family` (MAP) from the 2SLS start plus
/// jittered restarts, then attaches the finite-difference Hessian and
/// normal-approximation intervals.
pub fn map_fit(
    data: &Dataset,
    network: &RowNormalizedNetwork,
    family: &ModelFamily,
    priors: &Priors,
    cfg: &FitConfig,
) -> Result<FitResult> {
    fit_objective(data, network, family, priors, cfg, Objective::Posterior)
}

/// Maximum likelihood fit of a classical NAM.
pub fn nam_mle(data: &Dataset, network: &RowNormalizedNetwork, kind: ModelKind, cfg: &FitConfig) -> Result<FitResult> {
    let family = match kind {
        ModelKind::NamEffects => ModelFamily::nam_effects(),
        ModelKind::NamDisturbances => ModelFamily::nam_disturbances(),
        other => return Err(Error::InvalidInput(format!("nam_mle needs a NAM family, got {other}"))),
    };
    fit_objective(data, network, &family, &Priors::default(), cfg, Objective::Likelihood)
}

fn fit_objective(
    data: &Dataset,
    network: &RowNormalizedNetwork,
    family: &ModelFamily,
    priors: &Priors,
    cfg: &FitConfig,
    objective: Objective,
) -> Result<FitResult> {
    cfg.validate()?;
    let ctx = EvalContext::new(family, data, network, priors)?;
    let (p, d) = (ctx.p(), ctx.latent_dim());
    let dim = p + d + 2;
    let rho_idx = p + d;
    let (lo, hi) = stable_bounds(network, cfg.rho_bounds);
    let mut bounds = Bounds::unbounded(dim);
    bounds.lower[rho_idx] = lo;
    bounds.upper[rho_idx] = hi;

    let init = init_2sls(data, network, family.latent(), (lo, hi))?;
    let z0 = init.to_internal();
    let mut starts = vec![z0.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.jitter_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    for _ in 0..cfg.multistart {
        let mut z = z0.clone();
        for v in z.iter_mut() {
            *v += jitter.sample(&mut rng);
        }
        z[rho_idx] = z[rho_idx].clamp(lo, hi);
        starts.push(z);
    }

    let opts = LbfgsOptions { max_iters: cfg.max_iters, grad_tol: cfg.grad_tol, history: cfg.history_size };
    let mut best: Option<super::optimizer::Minimum> = None;
    let mut failed = 0;
    let mut last_err = String::from("no starts");
    for z in starts {
        let run = minimize(
            |z| objective_at(&ctx, objective, z).map(|(f, g, _)| (-f, -g)),
            z,
            &bounds,
            &opts,
        );
        match run {
            Ok(m) if m.f.is_finite() => {
                if best.as_ref().map_or(true, |b| m.f < b.f) {
                    best = Some(m);
                }
            }
            Ok(_) => failed += 1,
            Err(e) => {
                failed += 1;
                last_err = e.to_string();
            }
        }
    }
    let best = best.ok_or(Error::AllStartsFailed(last_err))?;
    let z = best.x.clone();
    let (value, _, reported) = objective_at(&ctx, objective, &z)?;
    let hessian = negative_hessian(&ctx, objective, &z, &bounds, cfg.hessian_step)?;
    let theta_map = ParamVector::from_internal(&z, p, d);
    let names = ParamVector::names(&data.column_names, d);
    let mut fit = FitResult {
        theta_map,
        log_post: reported,
        objective_value: value,
        objective,
        hessian,
        intervals: Vec::new(),
        interval_error: None,
        level: cfg.level,
        converged: best.converged,
        n_iters: best.iterations,
        projected_grad_norm: best.projected_grad_norm,
        objective_trace: best.f_history.iter().map(|f| -f).collect(),
        init_used: init,
        starts_failed: failed,
        rho_bounds: (lo, hi),
        family: family.clone(),
        names,
    };
    match credible_intervals(&fit, cfg.level) {
        Ok(iv) => fit.intervals = iv,
        Err(e) => fit.interval_error = Some(e.to_string()),
    }
    Ok(fit)
}

/// Central differences of the analytic gradient, symmetrized. Falls back to a
/// one-sided difference in a coordinate whose central stencil leaves the
/// feasible region.
fn negative_hessian(
    ctx: &EvalContext<'_>,
    objective: Objective,
    z: &DVector<f64>,
    bounds: &Bounds,
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = z.len();
    let grad = |z: &DVector<f64>| objective_at(ctx, objective, z).map(|(_, g, _)| g);
    let g0 = grad(z)?;
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let plus = if zp[j] <= bounds.upper[j] { grad(&zp).ok() } else { None };
        let minus = if zm[j] >= bounds.lower[j] { grad(&zm).ok() } else { None };
        let col = match (plus, minus) {
            (Some(gp), Some(gm)) => (gp - gm) / (2.0 * h),
            (Some(gp), None) => (gp - &g0) / h,
            (None, Some(gm)) => (&g0 - gm) / h,
            // box narrower than the stencil: the objective is still defined outside it
            (None, None) => match (grad(&zp), grad(&zm)) {
                (Ok(gp), Ok(gm)) => (gp - gm) / (2.0 * h),
                _ => {
                    return Err(Error::FactorizationFailure(format!(
                        "gradient unavailable on both sides of coordinate {j} for the Hessian"
                    )))
                }
            },
        };
        hess.set_column(j, &(-col));
    }
    crate::linalg::symmetrize(&mut hess);
    Ok(hess)
}

/// Normal-approximation intervals `θ̂ ± z sqrt((H⁻¹)_jj)` on the internal
/// scale; the `log σ²` interval is exponentiated for σ² and `ρ` endpoints are
/// truncated to `[-1, 1]`. A `log_sigma2` row reports the internal scale.
pub fn credible_intervals(fit: &FitResult, level: f64) -> Result<Vec<Interval>> {
    normal_intervals(&fit.theta_map, &fit.hessian, &fit.names, level)
}

pub fn normal_intervals(theta: &ParamVector, hessian: &DMatrix<f64>, names: &[String], level: f64) -> Result<Vec<Interval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("interval level must be in (0, 1), got {level}")));
    }
    let z_hat = theta.to_internal();
    let n = z_hat.len();
    if hessian.shape() != (n, n) || names.len() != n {
        return Err(Error::BadShape("Hessian, names and parameters disagree in size".into()));
    }
    let mut h = hessian.clone();
    crate::linalg::symmetrize(&mut h);
    let eig = SymmetricEigen::new(h.clone());
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::IndefiniteHessian { eigenvalues: eig.eigenvalues.iter().copied().collect() });
    }
    let chol = h.cholesky().ok_or_else(|| Error::IndefiniteHessian {
        eigenvalues: eig.eigenvalues.iter().copied().collect(),
    })?;
    let cov = chol.inverse();
    let q = StdNormal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 * (1.0 + level));
    let rho_idx = n - 2;
    let mut out = Vec::with_capacity(n + 1);
    for j in 0..n {
        let half = q * cov[(j, j)].sqrt();
        let (lo, hi) = (z_hat[j] - half, z_hat[j] + half);
        if j == n - 1 {
            out.push(Interval { name: names[j].clone(), estimate: theta.sigma2, lower: lo.exp(), upper: hi.exp() });
            out.push(Interval { name: "log_sigma2".into(), estimate: z_hat[j], lower: lo, upper: hi });
        } else if j == rho_idx {
            out.push(Interval { name: names[j].clone(), estimate: z_hat[j], lower: lo.max(-1.0), upper: hi.min(1.0) });
        } else {
            out.push(Interval { name: names[j].clone(), estimate: z_hat[j], lower: lo, upper: hi });
        }
    }
    Ok(out)
}
