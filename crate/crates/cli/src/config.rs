//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional;
//! `hanam --print-config` lists all keys with their defaults and meaning.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use hanam::estimation::FitConfig;
use hanam::latent::LatentSamplerConfig;
use hanam::model::{ModelKind, Priors};
use hanam::sim::{ForwardSimConfig, LatentSource, Method, NetParams, NetworkSource, ScenarioConfig};

/// Keys in print order, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed; overridden by HANAM_SEED, which is overridden by --seed"),
    ("output_dir", "directory for output files; overridden by --out"),
    ("verbosity", "0 warnings only, 1 progress, 2 debug"),
    ("jobs", "worker threads for scenario runs; overridden by --jobs"),
    ("fit.rho_lower", "lower bound on rho (further limited by network stability)"),
    ("fit.rho_upper", "upper bound on rho (further limited by network stability)"),
    ("fit.max_iters", "optimizer iteration limit per start"),
    ("fit.grad_tol", "convergence tolerance on the projected gradient max-norm"),
    ("fit.history_size", "quasi-Newton memory"),
    ("fit.hessian_step", "finite-difference step for the Hessian"),
    ("fit.multistart", "jittered restarts in addition to the 2SLS start"),
    ("fit.jitter_sd", "standard deviation of the restart jitter"),
    ("fit.level", "interval level"),
    ("priors.sigma_beta", "prior sd of beta"),
    ("priors.sigma_gamma", "prior sd of gamma"),
    ("priors.mu_rho", "prior mean of rho"),
    ("priors.sigma_rho", "prior sd of rho"),
    ("priors.a", "inverse-gamma shape (times 2) of sigma2"),
    ("priors.b", "inverse-gamma scale (times 2) of sigma2"),
    ("sampler.dim", "latent dimension"),
    ("sampler.burn_in", "sweeps discarded before sampling"),
    ("sampler.thin", "sweeps between kept draws"),
    ("sampler.n_draws", "draws kept"),
    ("sampler.step_size", "random-walk proposal sd for positions"),
    ("sampler.prior_scale_positions", "prior sd of latent positions"),
    ("sampler.prior_scale_coeffs", "prior sd of edge-model coefficients"),
    ("net.n", "nodes per generated network"),
    ("net.dim", "latent dimension of generated networks"),
    ("net.n_clusters", "latent position clusters"),
    ("net.cluster_spread", "sd of cluster centres"),
    ("net.cluster_scale", "sd of positions around their centre"),
    ("net.target_degree", "expected out-degree used to calibrate the edge intercept"),
    ("net.edge_intercept", "fixed edge intercept; empty to calibrate from net.target_degree"),
    ("net.theta_x", "edge-model coefficient of |x_i - x_j|"),
    ("net.x_mean", "mean of the generated covariate"),
    ("net.x_sd", "sd of the generated covariate"),
    ("model.family", "outcome law for simulate and scenarios: HANE (effects) or HAND (disturbances)"),
    ("model.rho", "true rho for simulate"),
    ("model.beta", "true (intercept, x) coefficients"),
    ("model.gamma", "true latent coefficients, one per latent dimension"),
    ("model.sigma2", "true residual variance"),
    ("simulate.tau", "noise sd of the oracle latent draws written by simulate"),
    ("simulate.n_draws", "oracle latent draws written by simulate"),
    ("scenario.rhos", "rho grid"),
    ("scenario.methods", "methods fitted per replicate: HANE, HAND, NAM-Bayes, NAM-MLE"),
    ("scenario.n_reps", "replicates per cell"),
    ("scenario.pool_size", "fixed pool of networks shared by all cells; 0 draws a new network per replicate"),
    ("scenario.max_network_attempts", "network draws tried before giving up on a stable one"),
    ("scenario.latent_source", "oracle, sampler or file"),
    ("scenario.tau", "noise sd of oracle latent draws"),
    ("scenario.oracle_draws", "oracle latent draws per network"),
    ("scenario.draws_dir", "directory of net<k>.draws files for latent_source = file"),
    ("scenario.cells", "comma-separated grid indices to run; empty runs every cell"),
    (
        "scenario.full_grid",
        "true runs the 84-cell design (HANE/HAND x 7 rho x 3 beta x 2 gamma, 200 replicates, pool 200); slow",
    ),
    ("forward.horizon", "time steps of the longitudinal process"),
    ("forward.sigma_alpha", "sd of the persistent innovation"),
    ("forward.sigma_alpha_start", "initial sd of the persistent innovation; empty for constant"),
    ("forward.sigma_eps0", "initial sd of the transient innovation"),
    ("forward.decay", "per-step decay of the transient sd; 1 keeps it constant"),
    ("limit.n", "nodes of the network used by validate-limit"),
    ("limit.rho", "rho used by validate-limit"),
    ("limit.family", "HANE (effects process) or HAND (disturbances process)"),
    ("limit.n_paths", "independent paths simulated by validate-limit"),
];

/// Keys that do not influence any numerical output.
pub const RESULT_NEUTRAL: &[&str] = &["output_dir", "verbosity", "jobs"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub verbosity: u8,
    pub jobs: usize,
    pub fit: FitConfig,
    pub priors: Priors,
    pub sampler: LatentSamplerConfig,
    pub net: NetParams,
    pub family: ModelKind,
    pub rho: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma2: f64,
    pub simulate_tau: f64,
    pub simulate_draws: usize,
    pub rhos: Vec<f64>,
    pub methods: Vec<Method>,
    pub n_reps: usize,
    pub pool_size: usize,
    pub max_network_attempts: usize,
    pub latent_source: String,
    pub tau: f64,
    pub oracle_draws: usize,
    pub draws_dir: Option<PathBuf>,
    pub cells: Vec<usize>,
    pub full_grid: bool,
    pub forward: ForwardSimConfig,
    pub limit_n: usize,
    pub limit_rho: f64,
    pub limit_family: ModelKind,
    pub limit_paths: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sc = ScenarioConfig::default();
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            verbosity: 0,
            jobs: 1,
            fit: FitConfig::default(),
            priors: Priors::default(),
            sampler: LatentSamplerConfig::default(),
            net: NetParams::default(),
            family: ModelKind::Hane,
            rho: sc.rho,
            beta: sc.beta,
            gamma: sc.gamma,
            sigma2: sc.sigma2,
            simulate_tau: 0.1,
            simulate_draws: 100,
            rhos: vec![0.0, 0.3, 0.6],
            methods: vec![Method::Hane, Method::NamBayes],
            n_reps: sc.n_reps,
            pool_size: 20,
            max_network_attempts: sc.max_network_attempts,
            latent_source: "oracle".into(),
            tau: 0.1,
            oracle_draws: 100,
            draws_dir: None,
            cells: Vec::new(),
            full_grid: false,
            forward: ForwardSimConfig::default(),
            limit_n: 30,
            limit_rho: 0.4,
            limit_family: ModelKind::Hane,
            limit_paths: 2000,
        }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("`{v}` is not a valid number"))
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_num<T: FromStr>(v: &str) -> Result<Option<T>, String> {
    if v.trim().is_empty() {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), T::to_string)
}

fn family(v: &str) -> Result<ModelKind, String> {
    v.parse::<ModelKind>().map_err(|e| e.to_string())
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "seed" => self.seed.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "verbosity" => self.verbosity.to_string(),
            "jobs" => self.jobs.to_string(),
            "fit.rho_lower" => self.fit.rho_bounds.0.to_string(),
            "fit.rho_upper" => self.fit.rho_bounds.1.to_string(),
            "fit.max_iters" => self.fit.max_iters.to_string(),
            "fit.grad_tol" => self.fit.grad_tol.to_string(),
            "fit.history_size" => self.fit.history_size.to_string(),
            "fit.hessian_step" => self.fit.hessian_step.to_string(),
            "fit.multistart" => self.fit.multistart.to_string(),
            "fit.jitter_sd" => self.fit.jitter_sd.to_string(),
            "fit.level" => self.fit.level.to_string(),
            "priors.sigma_beta" => self.priors.sigma_beta.to_string(),
            "priors.sigma_gamma" => self.priors.sigma_gamma.to_string(),
            "priors.mu_rho" => self.priors.mu_rho.to_string(),
            "priors.sigma_rho" => self.priors.sigma_rho.to_string(),
            "priors.a" => self.priors.a.to_string(),
            "priors.b" => self.priors.b.to_string(),
            "sampler.dim" => self.sampler.dim.to_string(),
            "sampler.burn_in" => self.sampler.burn_in.to_string(),
            "sampler.thin" => self.sampler.thin.to_string(),
            "sampler.n_draws" => self.sampler.n_draws.to_string(),
            "sampler.step_size" => self.sampler.step_size.to_string(),
            "sampler.prior_scale_positions" => self.sampler.prior_scale_positions.to_string(),
            "sampler.prior_scale_coeffs" => self.sampler.prior_scale_coeffs.to_string(),
            "net.n" => self.net.n.to_string(),
            "net.dim" => self.net.dim.to_string(),
            "net.n_clusters" => self.net.n_clusters.to_string(),
            "net.cluster_spread" => self.net.cluster_spread.to_string(),
            "net.cluster_scale" => self.net.cluster_scale.to_string(),
            "net.target_degree" => self.net.target_degree.to_string(),
            "net.edge_intercept" => opt_str(&self.net.edge_intercept),
            "net.theta_x" => self.net.theta_x.to_string(),
            "net.x_mean" => self.net.x_mean.to_string(),
            "net.x_sd" => self.net.x_sd.to_string(),
            "model.family" => self.family.to_string(),
            "model.rho" => self.rho.to_string(),
            "model.beta" => join(&self.beta),
            "model.gamma" => join(&self.gamma),
            "model.sigma2" => self.sigma2.to_string(),
            "simulate.tau" => self.simulate_tau.to_string(),
            "simulate.n_draws" => self.simulate_draws.to_string(),
            "scenario.rhos" => join(&self.rhos),
            "scenario.methods" => join(&self.methods),
            "scenario.n_reps" => self.n_reps.to_string(),
            "scenario.pool_size" => self.pool_size.to_string(),
            "scenario.max_network_attempts" => self.max_network_attempts.to_string(),
            "scenario.latent_source" => self.latent_source.clone(),
            "scenario.tau" => self.tau.to_string(),
            "scenario.oracle_draws" => self.oracle_draws.to_string(),
            "scenario.draws_dir" => opt_str(&self.draws_dir.as_ref().map(|p| p.display())),
            "scenario.cells" => join(&self.cells),
            "scenario.full_grid" => self.full_grid.to_string(),
            "forward.horizon" => self.forward.horizon.to_string(),
            "forward.sigma_alpha" => self.forward.sigma_alpha.to_string(),
            "forward.sigma_alpha_start" => opt_str(&self.forward.sigma_alpha_start),
            "forward.sigma_eps0" => self.forward.sigma_eps0.to_string(),
            "forward.decay" => self.forward.decay.to_string(),
            "limit.n" => self.limit_n.to_string(),
            "limit.rho" => self.limit_rho.to_string(),
            "limit.family" => self.limit_family.to_string(),
            "limit.n_paths" => self.limit_paths.to_string(),
            _ => return None,
        };
        Some(v)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let v = v.trim();
        match key {
            "seed" => self.seed = num(v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "verbosity" => self.verbosity = num(v)?,
            "jobs" => self.jobs = num(v)?,
            "fit.rho_lower" => self.fit.rho_bounds.0 = num(v)?,
            "fit.rho_upper" => self.fit.rho_bounds.1 = num(v)?,
            "fit.max_iters" => self.fit.max_iters = num(v)?,
            "fit.grad_tol" => self.fit.grad_tol = num(v)?,
            "fit.history_size" => self.fit.history_size = num(v)?,
            "fit.hessian_step" => self.fit.hessian_step = num(v)?,
            "fit.multistart" => self.fit.multistart = num(v)?,
            "fit.jitter_sd" => self.fit.jitter_sd = num(v)?,
            "fit.level" => self.fit.level = num(v)?,
            "priors.sigma_beta" => self.priors.sigma_beta = num(v)?,
            "priors.sigma_gamma" => self.priors.sigma_gamma = num(v)?,
            "priors.mu_rho" => self.priors.mu_rho = num(v)?,
            "priors.sigma_rho" => self.priors.sigma_rho = num(v)?,
            "priors.a" => self.priors.a = num(v)?,
            "priors.b" => self.priors.b = num(v)?,
            "sampler.dim" => self.sampler.dim = num(v)?,
            "sampler.burn_in" => self.sampler.burn_in = num(v)?,
            "sampler.thin" => self.sampler.thin = num(v)?,
            "sampler.n_draws" => self.sampler.n_draws = num(v)?,
            "sampler.step_size" => self.sampler.step_size = num(v)?,
            "sampler.prior_scale_positions" => self.sampler.prior_scale_positions = num(v)?,
            "sampler.prior_scale_coeffs" => self.sampler.prior_scale_coeffs = num(v)?,
            "net.n" => self.net.n = num(v)?,
            "net.dim" => self.net.dim = num(v)?,
            "net.n_clusters" => self.net.n_clusters = num(v)?,
            "net.cluster_spread" => self.net.cluster_spread = num(v)?,
            "net.cluster_scale" => self.net.cluster_scale = num(v)?,
            "net.target_degree" => self.net.target_degree = num(v)?,
            "net.edge_intercept" => self.net.edge_intercept = opt_num(v)?,
            "net.theta_x" => self.net.theta_x = num(v)?,
            "net.x_mean" => self.net.x_mean = num(v)?,
            "net.x_sd" => self.net.x_sd = num(v)?,
            "model.family" => self.family = family(v)?,
            "model.rho" => self.rho = num(v)?,
            "model.beta" => self.beta = list(v)?,
            "model.gamma" => self.gamma = list(v)?,
            "model.sigma2" => self.sigma2 = num(v)?,
            "simulate.tau" => self.simulate_tau = num(v)?,
            "simulate.n_draws" => self.simulate_draws = num(v)?,
            "scenario.rhos" => self.rhos = list(v)?,
            "scenario.methods" => {
                self.methods = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<Method>().map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()?
            }
            "scenario.n_reps" => self.n_reps = num(v)?,
            "scenario.pool_size" => self.pool_size = num(v)?,
            "scenario.max_network_attempts" => self.max_network_attempts = num(v)?,
            "scenario.latent_source" => {
                if !matches!(v, "oracle" | "sampler" | "file") {
                    return Err(format!("latent source must be oracle, sampler or file, got `{v}`"));
                }
                self.latent_source = v.to_string()
            }
            "scenario.tau" => self.tau = num(v)?,
            "scenario.oracle_draws" => self.oracle_draws = num(v)?,
            "scenario.draws_dir" => self.draws_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "scenario.cells" => self.cells = list(v)?,
            "scenario.full_grid" => {
                self.full_grid = v.parse().map_err(|_| format!("`{v}` is not true or false"))?
            }
            "forward.horizon" => self.forward.horizon = num(v)?,
            "forward.sigma_alpha" => self.forward.sigma_alpha = num(v)?,
            "forward.sigma_alpha_start" => self.forward.sigma_alpha_start = opt_num(v)?,
            "forward.sigma_eps0" => self.forward.sigma_eps0 = num(v)?,
            "forward.decay" => self.forward.decay = num(v)?,
            "limit.n" => self.limit_n = num(v)?,
            "limit.rho" => self.limit_rho = num(v)?,
            "limit.family" => self.limit_family = family(v)?,
            "limit.n_paths" => self.limit_paths = num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{source}:{}: expected `key = value`, got `{line}`", i + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("{source}:{}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Every key with its current value, one `key = value` per line.
    pub fn render(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// As [`render`](Self::render) without the keys that cannot change results.
    pub fn render_results(&self) -> String {
        KEYS.iter()
            .filter(|(k, _)| !RESULT_NEUTRAL.contains(k))
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// As [`render`](Self::render) with each key preceded by its description.
    pub fn render_documented(&self) -> String {
        KEYS.iter()
            .map(|(k, doc)| format!("# {doc}\n{k} = {}\n", self.get(k).expect("listed key")))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.fit.validate().map_err(|e| e.to_string())?;
        self.priors.validate().map_err(|e| e.to_string())?;
        self.net.validate().map_err(|e| e.to_string())?;
        if self.jobs == 0 {
            return Err("jobs must be at least 1".into());
        }
        if self.rhos.is_empty() || self.methods.is_empty() {
            return Err("scenario.rhos and scenario.methods must not be empty".into());
        }
        if self.latent_source == "file" && self.draws_dir.is_none() {
            return Err("scenario.latent_source = file needs scenario.draws_dir".into());
        }
        let size = if self.full_grid { 84 } else { self.rhos.len() };
        if let Some(&c) = self.cells.iter().find(|&&c| c >= size) {
            return Err(format!("scenario cell {c} is outside the {size}-cell grid"));
        }
        Ok(())
    }

    /// Every cell of the scenario grid, in index order.
    ///
    /// The default grid varies `rho` over `scenario.rhos` with the `model.*`
    /// truth; the full grid crosses both families, seven `rho` values, three
    /// covariate effects and two `gamma` vectors.
    pub fn grid(&self) -> Vec<ScenarioConfig> {
        let mut cells = Vec::new();
        if self.full_grid {
            let gammas = [("small", vec![0.03, 0.05, -0.1]), ("large", vec![0.06, 0.1, -0.2])];
            for family in [ModelKind::Hane, ModelKind::Hand] {
                for r in 0..=6 {
                    let rho = r as f64 / 10.0;
                    for b in [0.0, 0.5, 1.0] {
                        for (gname, gamma) in &gammas {
                            let index = cells.len();
                            let mut sc = self.cell(index, rho);
                            sc.id = format!("{family} rho={rho} beta={b} gamma={gname}");
                            sc.family = family;
                            sc.beta = vec![0.5, b];
                            sc.gamma = gamma.clone();
                            sc.n_reps = 200;
                            sc.network_source = NetworkSource::FixedPool { size: 200 };
                            cells.push(sc);
                        }
                    }
                }
            }
        } else {
            for (index, &rho) in self.rhos.iter().enumerate() {
                cells.push(self.cell(index, rho));
            }
        }
        cells
    }

    fn cell(&self, index: usize, rho: f64) -> ScenarioConfig {
        ScenarioConfig {
            id: format!("rho={rho}"),
            index: index as u64,
            family: self.family,
            rho,
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
            sigma2: self.sigma2,
            n_reps: self.n_reps,
            network_source: if self.pool_size == 0 {
                NetworkSource::Regenerate
            } else {
                NetworkSource::FixedPool { size: self.pool_size }
            },
            net_params: self.net.clone(),
            seed: self.seed,
            max_network_attempts: self.max_network_attempts,
            fit: self.fit.clone(),
            priors: self.priors,
        }
    }

    pub fn scenario_latent_source(&self) -> LatentSource {
        match self.latent_source.as_str() {
            "sampler" => LatentSource::Sampler(self.sampler.clone()),
            "file" => LatentSource::File(self.draws_dir.clone().unwrap_or_default()),
            _ => LatentSource::OraclePerturbed { tau: self.tau, n_draws: self.oracle_draws },
        }
    }
}
