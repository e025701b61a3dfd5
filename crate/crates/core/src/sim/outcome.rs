use nalgebra::{DMatrix, DVector, LU, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::seed::mix_seed;
use crate::error::{Error, Result};
use crate::model::{ModelKind, ParamVector};
use crate::net::RowNormalizedNetwork;

const DIVERGENCE_BOUND: f64 = 1e12;

fn check_inputs(network: &RowNormalizedNetwork, u: &DMatrix<f64>, x: &DMatrix<f64>, theta: &ParamVector) -> Result<()> {
    let n = network.n();
    if u.nrows() != n || x.nrows() != n {
        return Err(Error::BadShape(format!("U has {} rows and X {}, network has {n} nodes", u.nrows(), x.nrows())));
    }
    if u.ncols() != theta.gamma.len() || x.ncols() != theta.beta.len() {
        return Err(Error::BadShape(format!(
            "U is n x {} and X is n x {}, but theta has {} gamma and {} beta entries",
            u.ncols(),
            x.ncols(),
            theta.gamma.len(),
            theta.beta.len()
        )));
    }
    theta.validate()
}

/// `Uγ + Xβ`.
pub fn linear_predictor(u: &DMatrix<f64>, x: &DMatrix<f64>, theta: &ParamVector) -> DVector<f64> {
    let mut mu = x * DVector::from_column_slice(&theta.beta);
    if !theta.gamma.is_empty() {
        mu += u * DVector::from_column_slice(&theta.gamma);
    }
    mu
}

/// Exact sampler for the limiting laws
/// `N(M(Uγ + Xβ), σ² MMᵀ)` (effects) and `N(Uγ + Xβ, σ² MMᵀ)` (disturbances),
/// `M = (I - ρA)⁻¹`. A draw is `M(μ + σz)` or `μ + σMz`, solved through an LU
/// factor of `I - ρA`.
pub struct LimitingSampler {
    lu: LU<f64, Dyn, Dyn>,
    mu: DVector<f64>,
    sigma: f64,
    effects: bool,
}

impl LimitingSampler {
    pub fn new(
        network: &RowNormalizedNetwork,
        u: &DMatrix<f64>,
        x: &DMatrix<f64>,
        theta: &ParamVector,
        kind: ModelKind,
    ) -> Result<Self> {
        check_inputs(network, u, x, theta)?;
        if !network.check_stability(theta.rho) {
            let norm = network.spectral_norm()?;
            return Err(Error::Unstable { rho: theta.rho, product: theta.rho.abs() * norm });
        }
        let n = network.n();
        let b = DMatrix::identity(n, n) - network.matrix() * theta.rho;
        Ok(Self {
            lu: b.lu(),
            mu: linear_predictor(u, x, theta),
            sigma: theta.sigma2.sqrt(),
            effects: kind.is_effects(),
        })
    }

    pub fn mean(&self) -> DVector<f64> {
        if self.effects {
            self.solve(&self.mu)
        } else {
            self.mu.clone()
        }
    }

    /// `σ² MMᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.mu.len();
        let m = self.lu.solve(&DMatrix::identity(n, n)).expect("stable system is invertible");
        &m * m.transpose() * self.sigma.powi(2)
    }

    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(v).expect("stable system is invertible")
    }

    pub fn draw<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mu.len(), |_, _| StandardNormal.sample(rng));
        if self.effects {
            self.solve(&(&self.mu + z * self.sigma))
        } else {
            &self.mu + self.solve(&(z * self.sigma))
        }
    }
}

/// One draw from the limiting distribution of the effects (HANE-style) or
/// disturbances (HAND-style) process, selected by `kind.is_effects()`.
pub fn draw_limiting_outcome(
    network: &RowNormalizedNetwork,
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    theta: &ParamVector,
    kind: ModelKind,
    seed: u64,
) -> Result<DVector<f64>> {
    let sampler = LimitingSampler::new(network, u, x, theta, kind)?;
    Ok(sampler.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Longitudinal process settings.
///
/// `σ_{ε,t} = sigma_eps0 · decayᵗ` and
/// `σ_{α,t} = sigma_alpha + (sigma_alpha_start - sigma_alpha) · decayᵗ`, so the
/// default `sigma_alpha_start = sigma_alpha` keeps `σ_{α,t}` constant. A decay
/// of exactly 1 keeps `σ_{ε,t}` constant, which breaks convergence to the
/// limiting law and is only useful as a negative control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSimConfig {
    pub horizon: usize,
    pub sigma_alpha: f64,
    pub sigma_alpha_start: Option<f64>,
    pub sigma_eps0: f64,
    pub decay: f64,
    /// Initial outcome; zeros when unset.
    pub y0: Option<Vec<f64>>,
    /// Keep every `stride`-th state (the final state is always kept).
    pub stride: usize,
    pub seed: u64,
}

impl Default for ForwardSimConfig {
    fn default() -> Self {
        Self {
            horizon: 500,
            sigma_alpha: 1.0,
            sigma_alpha_start: None,
            sigma_eps0: 1.0,
            decay: 0.97,
            y0: None,
            stride: 1,
            seed: 1,
        }
    }
}

impl ForwardSimConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let start = self.sigma_alpha_start.unwrap_or(self.sigma_alpha);
        if [self.sigma_alpha, start, self.sigma_eps0].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("noise scales must be finite and non-negative".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidInput(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.horizon == 0 || self.stride == 0 {
            return Err(Error::InvalidInput("horizon and stride must be positive".into()));
        }
        if let Some(y0) = &self.y0 {
            if y0.len() != n {
                return Err(Error::BadShape(format!("y0 has {} entries, network has {n} nodes", y0.len())));
            }
            if y0.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("y0".into()));
            }
        }
        Ok(())
    }

    pub fn sigma_eps(&self, t: usize) -> f64 {
        self.sigma_eps0 * self.decay.powi(t as i32)
    }

    pub fn sigma_alpha_at(&self, t: usize) -> f64 {
        let start = self.sigma_alpha_start.unwrap_or(self.sigma_alpha);
        self.sigma_alpha + (start - self.sigma_alpha) * self.decay.powi(t as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<usize>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }
}

struct Process<'a> {
    a: &'a DMatrix<f64>,
    mu: DVector<f64>,
    rho: f64,
    effects: bool,
}

impl Process<'_> {
    /// Runs the recursion, handing every state to `keep`.
    fn run<F: FnMut(usize, &DVector<f64>)>(&self, fwd: &ForwardSimConfig, seed: u64, mut keep: F) -> Result<()> {
        let n = self.mu.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let mut y = fwd.y0.as_ref().map_or_else(|| DVector::zeros(n), |v| DVector::from_column_slice(v));
        keep(0, &y);
        for t in 1..=fwd.horizon {
            let lag = if self.effects { self.a * &y } else { self.a * (&y - &self.mu) };
            let mut next = &self.mu + lag * self.rho + &alpha * fwd.sigma_alpha_at(t);
            let se = fwd.sigma_eps(t);
            if se > 0.0 {
                for v in next.iter_mut() {
                    *v += se * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let max_abs = next.amax();
            if !(max_abs <= DIVERGENCE_BOUND) {
                return Err(Error::Diverging { step: t, max_abs });
            }
            y = next;
            keep(t, &y);
        }
        Ok(())
    }
}

/// Iterates `y_t = Uγ + Xβ + ρAy_{t-1} + σ_{α,t}α + σ_{ε,t}ε_t` (effects) or
/// `y_t = Uγ + Xβ + ρA(y_{t-1} - Uγ - Xβ) + σ_{α,t}α + σ_{ε,t}ε_t`
/// (disturbances) for `t = 1..T`, with `α` drawn once and `ε_t` fresh each
/// step. `theta.sigma2` is not used; the noise scales come from `fwd`.
pub fn forward_simulate(
    network: &RowNormalizedNetwork,
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    theta: &ParamVector,
    kind: ModelKind,
    fwd: &ForwardSimConfig,
) -> Result<Trajectory> {
    let process = process(network, u, x, theta, kind, fwd)?;
    let mut traj = Trajectory { times: Vec::new(), states: Vec::new() };
    process.run(fwd, fwd.seed, |t, y| {
        if t % fwd.stride == 0 || t == fwd.horizon {
            traj.times.push(t);
            traj.states.push(y.clone());
        }
    })?;
    Ok(traj)
}

fn process<'a>(
    network: &'a RowNormalizedNetwork,
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    theta: &ParamVector,
    kind: ModelKind,
    fwd: &ForwardSimConfig,
) -> Result<Process<'a>> {
    if u.nrows() != network.n() || x.nrows() != network.n() || u.ncols() != theta.gamma.len() || x.ncols() != theta.beta.len() {
        return Err(Error::BadShape("U, X and theta do not match the network".into()));
    }
    if !theta.rho.is_finite() || theta.beta.iter().chain(&theta.gamma).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta".into()));
    }
    fwd.validate(network.n())?;
    Ok(Process { a: network.matrix(), mu: linear_predictor(u, x, theta), rho: theta.rho, effects: kind.is_effects() })
}

/// Monte Carlo comparison of the forward process at the horizon with its
/// limiting law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub n_paths: usize,
    /// Largest `|mean_i - target_i| / se_i`.
    pub max_mean_z: f64,
    pub mean_pass: bool,
    /// Fraction of covariance entries (upper triangle) within the threshold.
    pub cov_fraction_within: f64,
    pub max_cov_z: f64,
    pub cov_pass: bool,
    pub pass: bool,
    pub threshold: f64,
}

pub const LIMIT_Z_THRESHOLD: f64 = 4.0;
pub const LIMIT_COV_FRACTION: f64 = 0.95;

/// Runs `n_paths` independent forward simulations (path `k` seeded from
/// `fwd.seed` and `k`) and compares the empirical mean and covariance of
/// `y_T` with the limiting law at `σ² = sigma_alpha²`. Standard errors are
/// `sqrt(Σ_ii / N)` for means and `sqrt((Σ_ii Σ_jj + Σ_ij²) / N)` for
/// covariances.
pub fn validate_limit(
    network: &RowNormalizedNetwork,
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    theta: &ParamVector,
    kind: ModelKind,
    fwd: &ForwardSimConfig,
    n_paths: usize,
) -> Result<LimitReport> {
    if n_paths < 2 {
        return Err(Error::InvalidInput("validate_limit needs at least 2 paths".into()));
    }
    let process = process(network, u, x, theta, kind, fwd)?;
    let limit_theta = ParamVector { sigma2: fwd.sigma_alpha.powi(2).max(f64::MIN_POSITIVE), ..theta.clone() };
    let target = LimitingSampler::new(network, u, x, &limit_theta, kind)?;
    let target_mean = target.mean();
    let mut target_cov = target.covariance();
    if fwd.sigma_alpha == 0.0 {
        target_cov.fill(0.0);
    }

    let n = network.n();
    let mut finals = DMatrix::zeros(n, n_paths);
    for k in 0..n_paths {
        let mut last = DVector::zeros(n);
        process.run(fwd, mix_seed(fwd.seed, 0, k as u64), |t, y| {
            if t == fwd.horizon {
                last = y.clone();
            }
        })?;
        finals.set_column(k, &last);
    }
    let np = n_paths as f64;
    let mean = finals.column_mean();
    let centered = DMatrix::from_fn(n, n_paths, |i, k| finals[(i, k)] - mean[i]);
    let cov = &centered * centered.transpose() / (np - 1.0);

    let z = |diff: f64, se: f64| {
        if se > 0.0 {
            diff.abs() / se
        } else if diff.abs() <= 1e-9 * (1.0 + target_mean.amax()) {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let max_mean_z = (0..n)
        .map(|i| z(mean[i] - target_mean[i], (target_cov[(i, i)] / np).sqrt()))
        .fold(0.0, f64::max);
    let mut within = 0usize;
    let mut total = 0usize;
    let mut max_cov_z = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let se = ((target_cov[(i, i)] * target_cov[(j, j)] + target_cov[(i, j)].powi(2)) / np).sqrt();
            let zij = z(cov[(i, j)] - target_cov[(i, j)], se);
            max_cov_z = max_cov_z.max(zij);
            total += 1;
            if zij <= LIMIT_Z_THRESHOLD {
                within += 1;
            }
        }
    }
    let cov_fraction_within = within as f64 / total as f64;
    let mean_pass = max_mean_z <= LIMIT_Z_THRESHOLD;
    let cov_pass = cov_fraction_within >= LIMIT_COV_FRACTION;
    Ok(LimitReport {
        n_paths,
        max_mean_z,
        mean_pass,
        cov_fraction_within,
        max_cov_z,
        cov_pass,
        pass: mean_pass && cov_pass,
        threshold: LIMIT_Z_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{row_normalize, Adjacency};

    fn two_cycle() -> RowNormalizedNetwork {
        row_normalize(&Adjacency::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap())
    }

    #[test]
    fn rho_one_on_two_cycle_grows_without_bound() {
        let net = two_cycle();
        let theta = ParamVector { beta: vec![1.0], gamma: vec![], rho: 1.0, sigma2: 1.0 };
        let x = DMatrix::from_element(2, 1, 1.0);
        let fwd = ForwardSimConfig { horizon: 1000, sigma_alpha: 0.0, sigma_eps0: 0.0, ..Default::default() };
        // unit root: linear growth, y_T = T z
        let traj = forward_simulate(&net, &DMatrix::zeros(2, 0), &x, &theta, ModelKind::NamEffects, &fwd).unwrap();
        assert_eq!(traj.last()[0], 1000.0);
        let theta = ParamVector { rho: 1.5, ..theta };
        let err = forward_simulate(&net, &DMatrix::zeros(2, 0), &x, &theta, ModelKind::NamEffects, &fwd).unwrap_err();
        assert!(matches!(err, Error::Diverging { .. }), "{err:?}");
    }

    #[test]
    fn unstable_rho_rejected_for_limit_draw() {
        let net = two_cycle();
        let theta = ParamVector { beta: vec![1.0], gamma: vec![], rho: 0.999, sigma2: 1.0 };
        let x = DMatrix::from_element(2, 1, 1.0);
        assert!(draw_limiting_outcome(&net, &DMatrix::zeros(2, 0), &x, &theta, ModelKind::NamEffects, 1).is_ok());
        let star = row_normalize(
            &Adjacency::from_rows(&[vec![0.0, 1.0, 1.0, 1.0], vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]])
                .unwrap(),
        );
        let theta = ParamVector { rho: 0.9, ..theta };
        let x = DMatrix::from_element(4, 1, 1.0);
        let err = draw_limiting_outcome(&star, &DMatrix::zeros(4, 0), &x, &theta, ModelKind::NamEffects, 1).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }

    #[test]
    fn stride_keeps_final_state() {
        let net = two_cycle();
        let theta = ParamVector { beta: vec![1.0], gamma: vec![], rho: 0.5, sigma2: 1.0 };
        let x = DMatrix::from_element(2, 1, 1.0);
        let fwd = ForwardSimConfig { horizon: 10, stride: 4, ..Default::default() };
        let traj = forward_simulate(&net, &DMatrix::zeros(2, 0), &x, &theta, ModelKind::NamEffects, &fwd).unwrap();
        assert_eq!(traj.times, vec![0, 4, 8, 10]);
    }
}
