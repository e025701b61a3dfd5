use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{Estimate, MetricsRow, MetricsTable};
use super::network::{generate_network, NetParams, SimNetwork};
use super::outcome::draw_limiting_outcome;
use super::seed::mix_seed;
use crate::error::{Error, Result};
use crate::estimation::{map_fit, nam_mle, FitConfig, FitResult};
use crate::latent::{
    fit_matrix_normal, procrustes_align, read_draws, sample_latent_posterior, LatentDraws, LatentSamplerConfig,
    MatrixNormalApprox,
};
use crate::model::{Dataset, ModelFamily, ModelKind, ParamVector, Priors};
use crate::net::{row_normalize, RowNormalizedNetwork};

/// Stream tags mixed into per-replicate seeds.
const POOL_STREAM: u64 = u64::MAX;
const NETWORK_TAG: u64 = 1;
const OUTCOME_TAG: u64 = 2;
const LATENT_TAG: u64 = 3;
const FIT_TAG: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "HANE")]
    Hane,
    #[serde(rename = "HAND")]
    Hand,
    /// MAP of the NAM matching the outcome law (effects or disturbances).
    #[serde(rename = "NAM-Bayes")]
    NamBayes,
    #[serde(rename = "NAM-MLE")]
    NamMle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hane => "HANE",
            Method::Hand => "HAND",
            Method::NamBayes => "NAM-Bayes",
            Method::NamMle => "NAM-MLE",
        }
    }

    pub fn uses_latent(self) -> bool {
        matches!(self, Method::Hane | Method::Hand)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('_', "-").as_str() {
            "HANE" => Ok(Method::Hane),
            "HAND" => Ok(Method::Hand),
            "NAM-BAYES" => Ok(Method::NamBayes),
            "NAM-MLE" => Ok(Method::NamMle),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NetworkSource {
    /// Fresh network for every replicate.
    Regenerate,
    /// Replicate `r` uses pool network `r % size`; the pool depends only on
    /// the master seed, so scenarios share it.
    FixedPool { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatentSource {
    /// Built-in latent-distance sampler.
    Sampler(LatentSamplerConfig),
    /// `n_draws` draws of the true positions plus `N(0, tau²)` noise.
    OraclePerturbed { tau: f64, n_draws: usize },
    /// Draws files `net{k}.draws` in a directory, one per pool network.
    File(PathBuf),
}

impl Default for LatentSource {
    fn default() -> Self {
        LatentSource::OraclePerturbed { tau: 0.1, n_draws: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    /// Position in the grid; mixed into replicate seeds.
    pub index: u64,
    /// Outcome law: effects (`Hane`) or disturbances (`Hand`).
    pub family: ModelKind,
    pub rho: f64,
    /// Intercept first.
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma2: f64,
    pub n_reps: usize,
    pub network_source: NetworkSource,
    pub net_params: NetParams,
    pub seed: u64,
    /// Attempts at drawing a network that is stable at `rho`.
    pub max_network_attempts: usize,
    pub fit: FitConfig,
    pub priors: Priors,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: "scenario".into(),
            index: 0,
            family: ModelKind::Hane,
            rho: 0.3,
            beta: vec![0.5, 0.5],
            gamma: vec![0.06, 0.1, -0.2],
            sigma2: 1.0,
            n_reps: 50,
            network_source: NetworkSource::FixedPool { size: 20 },
            net_params: NetParams::default(),
            seed: 1,
            max_network_attempts: 50,
            fit: FitConfig::default(),
            priors: Priors::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.family, ModelKind::Hane | ModelKind::Hand) {
            return Err(Error::InvalidInput(format!("scenario family must be HANE or HAND, got {}", self.family)));
        }
        self.theta()?;
        self.net_params.validate()?;
        if self.beta.len() != 2 {
            return Err(Error::InvalidInput("beta must hold (intercept, x coefficient)".into()));
        }
        if self.gamma.len() != self.net_params.dim {
            return Err(Error::InvalidInput(format!(
                "gamma has {} entries but positions have dimension {}",
                self.gamma.len(),
                self.net_params.dim
            )));
        }
        if self.n_reps == 0 || self.max_network_attempts == 0 {
            return Err(Error::InvalidInput("n_reps and max_network_attempts must be positive".into()));
        }
        if let NetworkSource::FixedPool { size: 0 } = self.network_source {
            return Err(Error::InvalidInput("network pool size must be positive".into()));
        }
        self.fit.validate()?;
        self.priors.validate()
    }

    pub fn theta(&self) -> Result<ParamVector> {
        ParamVector::new(self.beta.clone(), self.gamma.clone(), self.rho, self.sigma2)
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        mix_seed(self.seed, self.index, replicate as u64)
    }

    fn nam_kind(&self) -> ModelKind {
        if self.family.is_effects() {
            ModelKind::NamEffects
        } else {
            ModelKind::NamDisturbances
        }
    }
}

/// A network ready for fitting, with its latent summary when one was needed.
#[derive(Debug, Clone)]
pub struct PreparedNetwork {
    pub sim: SimNetwork,
    pub network: RowNormalizedNetwork,
    pub latent: Option<Arc<MatrixNormalApprox>>,
    /// Unstable draws discarded before this one.
    pub regenerated: usize,
}

/// Per-method outcome of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    /// `(parameter, estimate)` pairs, or the failure reason.
    pub result: std::result::Result<Vec<(String, Estimate)>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub network_index: Option<usize>,
    pub regenerated: usize,
    pub outcomes: Vec<MethodOutcome>,
}

fn network_slot(sc: &ScenarioConfig, replicate: usize) -> (Option<usize>, u64) {
    match sc.network_source {
        NetworkSource::FixedPool { size } => {
            let k = replicate % size;
            (Some(k), mix_seed(sc.seed, POOL_STREAM, k as u64))
        }
        NetworkSource::Regenerate => (None, mix_seed(sc.replicate_seed(replicate), NETWORK_TAG, 0)),
    }
}

fn prepare_network(
    sc: &ScenarioConfig,
    slot: (Option<usize>, u64),
    latent_source: &LatentSource,
    need_latent: bool,
) -> Result<PreparedNetwork> {
    let (pool_index, base) = slot;
    let mut last_err = None;
    for attempt in 0..sc.max_network_attempts {
        let seed = mix_seed(base, NETWORK_TAG, attempt as u64);
        let sim = match generate_network(&sc.net_params, seed) {
            Ok(s) => s,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let network = row_normalize(&sim.adjacency);
        if !network.check_stability(sc.rho) {
            last_err = Some(Error::Unstable { rho: sc.rho, product: sc.rho.abs() * network.spectral_norm()? });
            continue;
        }
        let latent = if need_latent {
            let draws = latent_draws(&sim, &network, latent_source, pool_index, mix_seed(base, LATENT_TAG, 0))?;
            Some(Arc::new(fit_matrix_normal(&procrustes_align(&draws)?)?))
        } else {
            None
        };
        return Ok(PreparedNetwork { sim, network, latent, regenerated: attempt });
    }
    Err(last_err.unwrap_or(Error::EmptyNetwork))
}

fn latent_draws(
    sim: &SimNetwork,
    network: &RowNormalizedNetwork,
    source: &LatentSource,
    pool_index: Option<usize>,
    seed: u64,
) -> Result<LatentDraws> {
    match source {
        LatentSource::OraclePerturbed { tau, n_draws } => {
            if !(*tau >= 0.0) || *n_draws < 2 {
                return Err(Error::InvalidInput("oracle draws need tau >= 0 and at least 2 draws".into()));
            }
            perturbed_draws(&sim.u, *tau, *n_draws, seed)
        }
        LatentSource::Sampler(cfg) => {
            let cfg = LatentSamplerConfig { seed, dim: sim.u.ncols(), ..cfg.clone() };
            let covariate = sim.x.columns(1, sim.x.ncols() - 1).into_owned();
            sample_latent_posterior(network, &covariate, &cfg)
        }
        LatentSource::File(dir) => {
            let k = pool_index.ok_or_else(|| {
                Error::InvalidInput("latent draws from files need a fixed network pool".into())
            })?;
            let draws = read_draws(&dir.join(format!("net{k}.draws")))?;
            if draws.n() != sim.u.nrows() {
                return Err(Error::BadShape(format!(
                    "draws file for pool network {k} has {} nodes, network has {}",
                    draws.n(),
                    sim.u.nrows()
                )));
            }
            Ok(draws)
        }
    }
}

fn fit_method(
    method: Method,
    sc: &ScenarioConfig,
    data: &Dataset,
    prepared: &PreparedNetwork,
    fit_seed: u64,
) -> Result<FitResult> {
    let cfg = FitConfig { seed: fit_seed, ..sc.fit.clone() };
    let latent = || {
        prepared
            .latent
            .clone()
            .ok_or_else(|| Error::InvalidInput("latent summary missing".into()))
    };
    match method {
        Method::Hane => map_fit(data, &prepared.network, &ModelFamily::hane(latent()?), &sc.priors, &cfg),
        Method::Hand => map_fit(data, &prepared.network, &ModelFamily::hand(latent()?), &sc.priors, &cfg),
        Method::NamBayes => {
            let family = ModelFamily::new(sc.nam_kind(), None)?;
            map_fit(data, &prepared.network, &family, &sc.priors, &cfg)
        }
        Method::NamMle => nam_mle(data, &prepared.network, sc.nam_kind(), &cfg),
    }
}

fn summarize(fit: std::result::Result<FitResult, Error>) -> std::result::Result<Vec<(String, Estimate)>, String> {
    let fit = fit.map_err(|e| e.to_string())?;
    if !fit.converged {
        return Err(format!("optimizer did not converge (projected gradient {:.3e})", fit.projected_grad_norm));
    }
    if let Some(e) = fit.interval_error {
        return Err(e);
    }
    Ok(fit
        .intervals
        .iter()
        .map(|iv| (iv.name.clone(), Estimate { value: iv.estimate, lower: iv.lower, upper: iv.upper }))
        .collect())
}

fn replicate_with(
    sc: &ScenarioConfig,
    methods: &[Method],
    replicate: usize,
    prepared: &PreparedNetwork,
) -> Result<ReplicateRecord> {
    let seed = sc.replicate_seed(replicate);
    let theta = sc.theta()?;
    let y = draw_limiting_outcome(
        &prepared.network,
        &prepared.sim.u,
        &prepared.sim.x,
        &theta,
        sc.family,
        mix_seed(seed, OUTCOME_TAG, 0),
    )?;
    let data = Dataset::new(y, prepared.sim.x.clone(), SimNetwork::column_names())?;
    let outcomes = methods
        .iter()
        .map(|&m| MethodOutcome {
            method: m,
            result: summarize(fit_method(m, sc, &data, prepared, mix_seed(seed, FIT_TAG, 0))),
        })
        .collect();
    Ok(ReplicateRecord {
        replicate,
        seed,
        network_index: network_slot(sc, replicate).0,
        regenerated: prepared.regenerated,
        outcomes,
    })
}

/// Runs replicate `replicate` on its own, rebuilding its network and latent
/// summary; gives the same record as the corresponding entry of
/// [`run_scenario`].
pub fn run_replicate(
    sc: &ScenarioConfig,
    methods: &[Method],
    latent_source: &LatentSource,
    replicate: usize,
) -> Result<ReplicateRecord> {
    sc.validate()?;
    let need_latent = methods.iter().any(|m| m.uses_latent());
    let prepared = prepare_network(sc, network_slot(sc, replicate), latent_source, need_latent)?;
    replicate_with(sc, methods, replicate, &prepared)
}

/// Truth for every reported parameter name.
fn truth_of(sc: &ScenarioConfig, name: &str) -> Option<f64> {
    let names = ParamVector::names(&SimNetwork::column_names(), sc.gamma.len());
    let theta = sc.theta().ok()?;
    let mut values: Vec<f64> = theta.beta.iter().chain(&theta.gamma).copied().collect();
    values.push(theta.rho);
    values.push(theta.sigma2);
    if name == "log_sigma2" {
        return Some(theta.sigma2.ln());
    }
    names.iter().position(|n| n == name).map(|i| values[i])
}

/// Output of a scenario run: per-replicate records and their aggregate.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub records: Vec<ReplicateRecord>,
    /// Replicates where no network or outcome could be produced.
    pub replicate_errors: Vec<(usize, String)>,
    pub table: MetricsTable,
}

/// Runs every replicate of `sc` with up to `jobs` worker threads and
/// aggregates per method and parameter. Results do not depend on `jobs`.
pub fn run_scenario(
    sc: &ScenarioConfig,
    methods: &[Method],
    latent_source: &LatentSource,
    jobs: usize,
) -> Result<ScenarioRun> {
    sc.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    let need_latent = methods.iter().any(|m| m.uses_latent());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;

    let results: Vec<std::result::Result<ReplicateRecord, String>> = pool.install(|| {
        let prepared: Vec<Option<std::result::Result<PreparedNetwork, String>>> = match sc.network_source {
            NetworkSource::FixedPool { size } => (0..size.min(sc.n_reps))
                .into_par_iter()
                .map(|k| {
                    Some(
                        prepare_network(sc, network_slot(sc, k), latent_source, need_latent)
                            .map_err(|e| e.to_string()),
                    )
                })
                .collect(),
            NetworkSource::Regenerate => Vec::new(),
        };
        (0..sc.n_reps)
            .into_par_iter()
            .map(|r| {
                let owned;
                let prep = match sc.network_source {
                    NetworkSource::FixedPool { size } => match prepared[r % size].as_ref().expect("pool entry") {
                        Ok(p) => p,
                        Err(e) => return Err(e.clone()),
                    },
                    NetworkSource::Regenerate => {
                        owned = prepare_network(sc, network_slot(sc, r), latent_source, need_latent)
                            .map_err(|e| e.to_string())?;
                        &owned
                    }
                };
                replicate_with(sc, methods, r, prep).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut replicate_errors = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => replicate_errors.push((r, e)),
        }
    }
    let table = aggregate(sc, methods, &records, replicate_errors.len());
    Ok(ScenarioRun { records, replicate_errors, table })
}

/// Folds replicate records in replicate order into a metrics table.
pub fn aggregate(sc: &ScenarioConfig, methods: &[Method], records: &[ReplicateRecord], lost: usize) -> MetricsTable {
    let mut table = MetricsTable::default();
    for &m in methods {
        let outcomes: Vec<&MethodOutcome> = records
            .iter()
            .flat_map(|r| r.outcomes.iter().filter(move |o| o.method == m))
            .collect();
        let failed = outcomes.iter().filter(|o| o.result.is_err()).count() + lost;
        let d = if m.uses_latent() { sc.gamma.len() } else { 0 };
        let mut params = ParamVector::names(&SimNetwork::column_names(), d);
        params.push("log_sigma2".into());
        for p in &params {
            let ests: Vec<Estimate> = outcomes
                .iter()
                .filter_map(|o| o.result.as_ref().ok())
                .filter_map(|v| v.iter().find(|(name, _)| name == p).map(|(_, e)| *e))
                .collect();
            let truth = truth_of(sc, p).unwrap_or(f64::NAN);
            table.rows.push(MetricsRow::aggregate(&sc.id, m.as_str(), p, truth, &ests, failed));
        }
    }
    table
}

/// `n_draws` copies of `u` with independent `N(0, tau²)` noise per entry.
pub fn perturbed_draws(u: &DMatrix<f64>, tau: f64, n_draws: usize, seed: u64) -> Result<LatentDraws> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentDraws::new((0..n_draws).map(|_| u.map(|v| v + tau * rng.sample::<f64, _>(StandardNormal))).collect())
}
