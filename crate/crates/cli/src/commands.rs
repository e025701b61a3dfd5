use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;

use hanam::estimation::{map_fit, nam_mle, FitConfig, FitResult, Interval};
use hanam::io::{read_covariates, read_edge_list, read_node_ids, read_outcome, Covariates};
use hanam::latent::{
    dyadic_covariates, fit_matrix_normal, parse_draws, procrustes_align, read_draws, sample_latent_posterior_with,
    DyadicCovariates, LatentDraws, LatentSamplerConfig, MatrixNormalApprox, SamplerDiagnostics,
};
use hanam::model::{Dataset, ModelFamily, ModelKind, ParamVector};
use hanam::net::{row_normalize, RowNormalizedNetwork};
use hanam::sim::{
    draw_limiting_outcome, generate_network, mix_seed, perturbed_draws, run_scenario, validate_limit,
    ForwardSimConfig, LimitReport, MetricsTable, NetParams, SimNetwork, LIMIT_COV_FRACTION, LIMIT_Z_THRESHOLD,
};

use crate::config::RunConfig;
use crate::output::{stamp, stamped_csv, Outputs, FORMAT_VERSION};
use crate::{CliError, CliResult, Invocation};

const NETWORK_STREAM: u64 = 1;
const OUTCOME_STREAM: u64 = 2;
const LATENT_STREAM: u64 = 3;
const FORWARD_STREAM: u64 = 5;

pub fn dispatch(cfg: &RunConfig, inv: &Invocation) -> CliResult<()> {
    let outputs = match inv {
        Invocation::Fit { network, outcome, covariates, draws, family, mle, standardize } => fit(
            cfg,
            FitInputs {
                network,
                outcome,
                covariates: covariates.as_deref(),
                draws: draws.as_deref(),
                families: family,
                mle: *mle,
                standardize: *standardize,
            },
        )?,
        Invocation::Simulate => simulate(cfg)?,
        Invocation::ValidateLimit => validate(cfg)?,
        Invocation::Scenarios => scenarios(cfg)?,
        Invocation::SampleLatent { network, nodes, covariates, standardize } => {
            sample_latent(cfg, network, nodes, covariates.as_deref(), *standardize)?
        }
        Invocation::Rerun { .. } => unreachable!("resolved before dispatch"),
    };
    for p in outputs.commit(&cfg.output_dir, cfg, inv)? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{}: file not found", path.display())))
    }
}

struct FitInputs<'a> {
    network: &'a Path,
    outcome: &'a Path,
    covariates: Option<&'a Path>,
    draws: Option<&'a Path>,
    families: &'a str,
    mle: bool,
    standardize: bool,
}

#[derive(Serialize)]
struct LatentReport {
    source: String,
    n_draws: usize,
    dim: usize,
    iterations: usize,
    converged: bool,
    ridge_applied: bool,
    fit_loglik: f64,
    sampler: Option<SamplerDiagnostics>,
}

#[derive(Serialize)]
struct FitReport {
    family: ModelKind,
    method: &'static str,
    objective_value: f64,
    log_posterior: f64,
    theta: ParamVector,
    estimates: Vec<Interval>,
    level: f64,
    interval_error: Option<String>,
    converged: bool,
    iterations: usize,
    projected_grad_norm: f64,
    starts_failed: usize,
    rho_bounds: (f64, f64),
    start: ParamVector,
}

#[derive(Serialize)]
struct FitFile<'a> {
    format_version: u32,
    tool_version: &'static str,
    config_hash: String,
    seed: u64,
    config: String,
    n: usize,
    columns: &'a [String],
    latent: Option<LatentReport>,
    fits: Vec<FitReport>,
}

fn sampler_config(cfg: &RunConfig) -> LatentSamplerConfig {
    LatentSamplerConfig { seed: mix_seed(cfg.seed, LATENT_STREAM, 0), ..cfg.sampler.clone() }
}

fn fit(cfg: &RunConfig, inp: FitInputs<'_>) -> CliResult<Outputs> {
    let kinds: Vec<ModelKind> = inp
        .families
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<ModelKind>())
        .collect::<hanam::Result<_>>()?;
    if kinds.is_empty() {
        return Err(CliError::Input("--family lists no model family".into()));
    }
    if inp.mle {
        if let Some(k) = kinds.iter().find(|k| k.has_latent()) {
            return Err(CliError::Input(format!("--mle applies to NAM families only, got {k}")));
        }
    }
    for p in [Some(inp.network), Some(inp.outcome), inp.covariates, inp.draws].into_iter().flatten() {
        require_file(p)?;
    }
    let (ids, y) = read_outcome(inp.outcome)?;
    let adjacency = read_edge_list(inp.network, &ids)?;
    let covariates = match inp.covariates {
        Some(p) => read_covariates(p, &ids, inp.standardize)?,
        None => Covariates::empty(ids.len()),
    };
    let (x, names) = covariates.design();
    let data = Dataset::new(y, x, names)?;
    let network = row_normalize(&adjacency);

    let (latent, latent_report) = if kinds.iter().any(|k| k.has_latent()) {
        let (draws, source) = match inp.draws {
            Some(p) => {
                let d = read_draws(p)?;
                if d.n() != ids.len() {
                    return Err(CliError::Input(format!(
                        "{}: draws have {} nodes, outcome file has {}",
                        p.display(),
                        d.n(),
                        ids.len()
                    )));
                }
                (d, p.display().to_string())
            }
            None => {
                info!("sampling latent positions");
                let dyadic = dyadic_covariates(&covariates.values, &covariates.kinds)?;
                (sample_latent_posterior_with(&network, &dyadic, &sampler_config(cfg))?, "sampler".to_string())
            }
        };
        let approx = fit_matrix_normal(&procrustes_align(&draws)?)?;
        let report = latent_report(&draws, &approx, source);
        (Some(Arc::new(approx)), Some(report))
    } else {
        (None, None)
    };

    let fit_cfg = FitConfig { seed: mix_seed(cfg.seed, 4, 0), ..cfg.fit.clone() };
    let mut reports = Vec::new();
    let mut csv = String::from("parameter,method,estimate,lower,upper\n");
    for &kind in &kinds {
        let family = ModelFamily::new(kind, latent.clone().filter(|_| kind.has_latent()))?;
        let (result, method) = if inp.mle {
            (nam_mle(&data, &network, kind, &fit_cfg)?, "MLE")
        } else {
            (map_fit(&data, &network, &family, &cfg.priors, &fit_cfg)?, "MAP")
        };
        if !result.converged {
            return Err(CliError::Numerical(format!(
                "{kind}: optimizer did not converge in {} iterations (projected gradient {:.3e})",
                result.n_iters, result.projected_grad_norm
            )));
        }
        if let Some(e) = &result.interval_error {
            warn!("{kind}: no intervals: {e}");
        }
        let label = if inp.mle { format!("{kind}-MLE") } else { kind.to_string() };
        for iv in &result.intervals {
            csv.push_str(&format!("{},{label},{},{},{}\n", iv.name, iv.estimate, iv.lower, iv.upper));
        }
        reports.push(fit_report(&result, method));
    }
    let file = FitFile {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        config_hash: crate::output::config_hash(cfg),
        seed: cfg.seed,
        config: cfg.render_results(),
        n: data.n(),
        columns: &data.column_names,
        latent: latent_report,
        fits: reports,
    };
    let mut out = Outputs::default();
    out.add_json("fit.json", &file);
    out.add("fit.csv", stamped_csv(cfg, &csv));
    Ok(out)
}

fn latent_report(draws: &LatentDraws, approx: &MatrixNormalApprox, source: String) -> LatentReport {
    LatentReport {
        source,
        n_draws: draws.len(),
        dim: draws.dim(),
        iterations: approx.iterations,
        converged: approx.converged,
        ridge_applied: approx.ridge_applied,
        fit_loglik: approx.fit_loglik,
        sampler: draws.diagnostics().cloned(),
    }
}

fn fit_report(r: &FitResult, method: &'static str) -> FitReport {
    FitReport {
        family: r.kind(),
        method,
        objective_value: r.objective_value,
        log_posterior: r.log_post,
        theta: r.theta_map.clone(),
        estimates: r.intervals.clone(),
        level: r.level,
        interval_error: r.interval_error.clone(),
        converged: r.converged,
        iterations: r.n_iters,
        projected_grad_norm: r.projected_grad_norm,
        starts_failed: r.starts_failed,
        rho_bounds: r.rho_bounds,
        start: r.init_used.clone(),
    }
}

/// First network from `params` that is stable at `rho`.
fn stable_network(
    params: &NetParams,
    rho: f64,
    seed: u64,
    attempts: usize,
) -> CliResult<(SimNetwork, RowNormalizedNetwork)> {
    let mut last = String::from("no attempts made");
    for a in 0..attempts.max(1) {
        match generate_network(params, mix_seed(seed, NETWORK_STREAM, a as u64)) {
            Ok(sim) => {
                let network = row_normalize(&sim.adjacency);
                if network.check_stability(rho) {
                    return Ok((sim, network));
                }
                last = format!("network unstable at rho = {rho}");
            }
            Err(e) if e.is_numerical() => last = e.to_string(),
            Err(e) => return Err(e.into()),
        }
    }
    Err(CliError::Numerical(format!("no usable network in {attempts} attempts: {last}")))
}

fn check_truth(cfg: &RunConfig, rho: f64, dim: usize) -> CliResult<ParamVector> {
    if cfg.beta.len() != 2 {
        return Err(CliError::Input("model.beta must hold (intercept, x coefficient)".into()));
    }
    if cfg.gamma.len() != dim {
        return Err(CliError::Input(format!(
            "model.gamma has {} entries, net.dim is {dim}",
            cfg.gamma.len()
        )));
    }
    Ok(ParamVector::new(cfg.beta.clone(), cfg.gamma.clone(), rho, cfg.sigma2)?)
}

fn node_id(i: usize) -> String {
    format!("v{i}")
}

fn simulate(cfg: &RunConfig) -> CliResult<Outputs> {
    if !matches!(cfg.family, ModelKind::Hane | ModelKind::Hand) {
        return Err(CliError::Input(format!("model.family must be HANE or HAND, got {}", cfg.family)));
    }
    let theta = check_truth(cfg, cfg.rho, cfg.net.dim)?;
    let (sim, network) = stable_network(&cfg.net, cfg.rho, cfg.seed, cfg.max_network_attempts)?;
    let y = draw_limiting_outcome(&network, &sim.u, &sim.x, &theta, cfg.family, mix_seed(cfg.seed, OUTCOME_STREAM, 0))?;
    let draws = perturbed_draws(&sim.u, cfg.simulate_tau, cfg.simulate_draws, mix_seed(cfg.seed, LATENT_STREAM, 0))?
        .with_comments(vec![stamp(cfg)]);
    let n = cfg.net.n;

    let mut edges = String::from("src,dst\n");
    let a = sim.adjacency.entries();
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                edges.push_str(&format!("{},{}\n", node_id(i), node_id(j)));
            }
        }
    }
    let mut cov = String::from("id,x\n");
    let mut outcome = String::from("id,y\n");
    let mut positions = String::from("id,cluster");
    for k in 1..=sim.u.ncols() {
        positions.push_str(&format!(",u{k}"));
    }
    positions.push('\n');
    for i in 0..n {
        cov.push_str(&format!("{},{}\n", node_id(i), sim.x[(i, 1)]));
        outcome.push_str(&format!("{},{}\n", node_id(i), y[i]));
        positions.push_str(&format!("{},{}", node_id(i), sim.cluster[i]));
        for k in 0..sim.u.ncols() {
            positions.push_str(&format!(",{}", sim.u[(i, k)]));
        }
        positions.push('\n');
    }
    let mut out = Outputs::default();
    out.add("edges.csv", stamped_csv(cfg, &edges));
    out.add("covariates.csv", stamped_csv(cfg, &cov));
    out.add("outcome.csv", stamped_csv(cfg, &outcome));
    out.add("positions.csv", stamped_csv(cfg, &positions));
    out.add("latent.draws", hanam::latent::format_draws(&draws));
    Ok(out)
}

#[derive(Serialize)]
struct LimitFile {
    format_version: u32,
    config_hash: String,
    seed: u64,
    family: ModelKind,
    n: usize,
    rho: f64,
    horizon: usize,
    decay: f64,
    report: LimitReport,
}

fn validate(cfg: &RunConfig) -> CliResult<Outputs> {
    if !matches!(cfg.limit_family, ModelKind::Hane | ModelKind::Hand) {
        return Err(CliError::Input(format!("limit.family must be HANE or HAND, got {}", cfg.limit_family)));
    }
    let params = NetParams { n: cfg.limit_n, ..cfg.net.clone() };
    params.validate()?;
    let theta = check_truth(cfg, cfg.limit_rho, params.dim)?;
    let (sim, network) = stable_network(&params, cfg.limit_rho, cfg.seed, cfg.max_network_attempts)?;
    let fwd = ForwardSimConfig { seed: mix_seed(cfg.seed, FORWARD_STREAM, 0), ..cfg.forward.clone() };
    let report = validate_limit(&network, &sim.u, &sim.x, &theta, cfg.limit_family, &fwd, cfg.limit_paths)?;
    println!(
        "limit check {}: mean max z {:.2} ({}), covariance within {:.1}% ({})",
        if report.pass { "PASS" } else { "FAIL" },
        report.max_mean_z,
        if report.mean_pass { "pass" } else { "fail" },
        100.0 * report.cov_fraction_within,
        if report.cov_pass { "pass" } else { "fail" },
    );
    let csv = format!(
        "check,statistic,threshold,pass\nmean_max_z,{},{},{}\ncov_fraction_within,{},{},{}\n",
        report.max_mean_z,
        LIMIT_Z_THRESHOLD,
        report.mean_pass,
        report.cov_fraction_within,
        LIMIT_COV_FRACTION,
        report.cov_pass
    );
    let file = LimitFile {
        format_version: FORMAT_VERSION,
        config_hash: crate::output::config_hash(cfg),
        seed: cfg.seed,
        family: cfg.limit_family,
        n: params.n,
        rho: cfg.limit_rho,
        horizon: fwd.horizon,
        decay: fwd.decay,
        report,
    };
    let mut out = Outputs::default();
    out.add("limit.csv", stamped_csv(cfg, &csv));
    out.add_json("limit.json", &file);
    Ok(out)
}

fn scenarios(cfg: &RunConfig) -> CliResult<Outputs> {
    let grid = cfg.grid();
    let cells: Vec<usize> = if cfg.cells.is_empty() { (0..grid.len()).collect() } else { cfg.cells.clone() };
    if cfg.full_grid {
        warn!("running {} cells of the full design; this takes many hours", cells.len());
    }
    let source = cfg.scenario_latent_source();
    let mut table = MetricsTable::default();
    let mut reps = String::from("scenario_id,replicate,seed,network,method,parameter,estimate,lower,upper,error\n");
    for &c in &cells {
        let sc = &grid[c];
        info!("cell {c} ({}): {} replicates", sc.id, sc.n_reps);
        let run = run_scenario(sc, &cfg.methods, &source, cfg.jobs)?;
        for (r, e) in &run.replicate_errors {
            warn!("{} replicate {r}: {e}", sc.id);
            reps.push_str(&format!("{},{r},,,,,,,,{}\n", sc.id, csv_field(e)));
        }
        for rec in &run.records {
            let net = rec.network_index.map_or(String::new(), |k| k.to_string());
            let prefix = format!("{},{},{},{net}", sc.id, rec.replicate, rec.seed);
            for o in &rec.outcomes {
                match &o.result {
                    Ok(ests) => {
                        for (name, e) in ests {
                            reps.push_str(&format!("{prefix},{},{name},{},{},{},\n", o.method, e.value, e.lower, e.upper));
                        }
                    }
                    Err(e) => reps.push_str(&format!("{prefix},{},,,,,{}\n", o.method, csv_field(e))),
                }
            }
        }
        table.extend(run.table);
    }
    let mut out = Outputs::default();
    out.add("metrics.csv", stamped_csv(cfg, &table.to_csv()));
    out.add("replicates.csv", stamped_csv(cfg, &reps));
    Ok(out)
}

fn csv_field(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn sample_latent(
    cfg: &RunConfig,
    network: &Path,
    nodes: &Path,
    covariates: Option<&Path>,
    standardize: bool,
) -> CliResult<Outputs> {
    for p in [Some(network), Some(nodes), covariates].into_iter().flatten() {
        require_file(p)?;
    }
    let ids = read_node_ids(nodes)?;
    let adjacency = read_edge_list(network, &ids)?;
    let dyadic = match covariates {
        Some(p) => {
            let cov = read_covariates(p, &ids, standardize)?;
            dyadic_covariates(&cov.values, &cov.kinds)?
        }
        None => DyadicCovariates::none(),
    };
    let draws = sample_latent_posterior_with(&row_normalize(&adjacency), &dyadic, &sampler_config(cfg))?;
    let text = hanam::latent::format_draws(&draws.clone().with_comments(vec![stamp(cfg)]));
    debug_assert!(parse_draws(&text, "latent.draws").is_ok());
    let mut out = Outputs::default();
    out.add("latent.draws", text);
    if let Some(d) = draws.diagnostics() {
        out.add_json("sampler.json", d);
    }
    Ok(out)
}
