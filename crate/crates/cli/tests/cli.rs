use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hanam::estimation::{nam_mle, FitConfig};
use hanam::io::{read_covariates, read_edge_list, read_outcome};
use hanam::latent::{format_draws, read_draws};
use hanam::model::{Dataset, ModelKind};
use hanam::net::row_normalize;
use hanam::sim::mix_seed;

fn hanam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hanam"))
        .current_dir(dir)
        .env_remove("HANAM_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulated(dir: &Path) -> PathBuf {
    let o = hanam(dir, &["simulate", "--out", "sim"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("sim")
}

/// `parameter -> estimate` for one method of a fit.csv.
fn estimate(csv: &str, method: &str, parameter: &str) -> f64 {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == parameter && f[1] == method)
        .unwrap_or_else(|| panic!("no {method} {parameter} row"))[2]
        .parse()
        .unwrap()
}

#[test]
fn print_config_lists_every_key_with_docs() {
    let dir = tempfile::tempdir().unwrap();
    let o = hanam(dir.path(), &["--print-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for key in ["seed = 1", "fit.grad_tol = ", "scenario.rhos = 0,0.3,0.6", "limit.n_paths = 2000"] {
        assert!(text.contains(key), "missing {key}");
    }
    assert!(text.lines().filter(|l| l.starts_with('#')).count() > 50);
}

#[test]
fn missing_outcome_file_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.csv"), "a,b\n").unwrap();
    let o = hanam(dir.path(), &["fit", "--network", "e.csv", "--outcome", "nothere.csv", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nothere.csv"), "{}", stderr(&o));
}

#[test]
fn malformed_inputs_exit_2_with_line_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("y.csv"), "id,y\na,1\nb,2\nc,3\n").unwrap();
    std::fs::write(dir.path().join("e.csv"), "a,b\nb,c\nc,zz\n").unwrap();
    let o = hanam(
        dir.path(),
        &["fit", "--network", "e.csv", "--outcome", "y.csv", "--family", "NAM_EFFECTS", "--out", "o"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("e.csv:3"), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(dir.path().join("o")).unwrap().count(), 0);

    std::fs::write(dir.path().join("c.txt"), "seed = 4\n\nfit.level = wide\n").unwrap();
    let o = hanam(dir.path(), &["--config", "c.txt", "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c.txt:3"), "{}", stderr(&o));
}

#[test]
fn degenerate_draws_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let n = 150;
    let mut draws = String::from(&format!("{n},1,2\n"));
    for _ in 0..2 {
        for i in 0..n {
            draws.push_str(&format!("{}\n", i as f64));
        }
    }
    std::fs::write(dir.path().join("flat.draws"), draws).unwrap();
    let o = hanam(
        dir.path(),
        &[
            "fit",
            "--network",
            "sim/edges.csv",
            "--outcome",
            "sim/outcome.csv",
            "--draws",
            "flat.draws",
            "--out",
            "o",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(sim.join("outcome.csv").exists());
}

#[test]
fn homophily_adjusted_fit_shrinks_influence_estimate() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let o = hanam(
        dir.path(),
        &[
            "fit",
            "--network",
            "sim/edges.csv",
            "--outcome",
            "sim/outcome.csv",
            "--covariates",
            "sim/covariates.csv",
            "--draws",
            "sim/latent.draws",
            "--family",
            "HANE,NAM_EFFECTS",
            "--out",
            "fit",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("fit/fit.csv")).unwrap();
    let hane = estimate(&csv, "HANE", "rho");
    let nam = estimate(&csv, "NAM_EFFECTS", "rho");
    assert!(hane < nam, "HANE {hane} vs NAM {nam}");

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit/fit.json")).unwrap()).unwrap();
    assert_eq!(json["format_version"], 1);
    assert_eq!(json["fits"].as_array().unwrap().len(), 2);
    assert_eq!(json["fits"][0]["converged"], true);
    assert!(json["config"].as_str().unwrap().contains("priors.sigma_beta = 2.25"));
}

#[test]
fn mle_flag_matches_library_nam_mle() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let o = hanam(
        dir.path(),
        &[
            "fit",
            "--network",
            "sim/edges.csv",
            "--outcome",
            "sim/outcome.csv",
            "--covariates",
            "sim/covariates.csv",
            "--family",
            "NAM_EFFECTS",
            "--mle",
            "--out",
            "mle",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("mle/fit.csv")).unwrap();

    let (ids, y) = read_outcome(&sim.join("outcome.csv")).unwrap();
    let adj = read_edge_list(&sim.join("edges.csv"), &ids).unwrap();
    let (x, names) = read_covariates(&sim.join("covariates.csv"), &ids, false).unwrap().design();
    let data = Dataset::new(y, x, names).unwrap();
    let cfg = FitConfig { seed: mix_seed(1, 4, 0), ..FitConfig::default() };
    let fit = nam_mle(&data, &row_normalize(&adj), ModelKind::NamEffects, &cfg).unwrap();
    for iv in &fit.intervals {
        assert_eq!(estimate(&csv, "NAM_EFFECTS-MLE", &iv.name), iv.estimate, "{}", iv.name);
    }

    let o = hanam(
        dir.path(),
        &["fit", "--network", "sim/edges.csv", "--outcome", "sim/outcome.csv", "--family", "HANE", "--mle"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_limit_default_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = hanam(dir.path(), &["validate-limit", "--out", "lim"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("lim/limit.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["pass"], true);
    assert_eq!(json["n"], 30);

    let o = hanam(dir.path(), &["validate-limit", "--out", "ctl", "--set", "forward.decay=1"]);
    assert!(o.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ctl/limit.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["cov_pass"], false);
}

#[test]
fn sampled_draws_round_trip_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("nodes.csv"), "id\na\nb\n").unwrap();
    std::fs::write(dir.path().join("e.csv"), "src,dst\na,b\n").unwrap();
    let o = hanam(
        dir.path(),
        &[
            "sample-latent",
            "--network",
            "e.csv",
            "--nodes",
            "nodes.csv",
            "--out",
            "lat",
            "--set",
            "sampler.burn_in=50",
            "--set",
            "sampler.n_draws=10",
            "--set",
            "sampler.dim=2",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let path = dir.path().join("lat/latent.draws");
    let bytes = std::fs::read_to_string(&path).unwrap();
    let draws = read_draws(&path).unwrap();
    assert_eq!((draws.n(), draws.dim(), draws.len()), (2, 2, 10));
    assert_eq!(format_draws(&draws), bytes);
}

#[test]
fn seed_precedence_flag_over_env_over_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.txt"), "seed = 11\n").unwrap();
    let seed_of = |out: &str| -> u64 {
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(out).join("manifest.json")).unwrap())
                .unwrap();
        m["seed"].as_u64().unwrap()
    };
    let run = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hanam"));
        cmd.current_dir(dir.path()).env_remove("HANAM_SEED");
        if let Some(e) = env {
            cmd.env("HANAM_SEED", e);
        }
        cmd.args(["--config", "c.txt", "simulate", "--out", out]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        assert!(cmd.output().unwrap().status.success());
    };
    run("a", None, None);
    run("b", Some("22"), None);
    run("c", Some("22"), Some("33"));
    assert_eq!((seed_of("a"), seed_of("b"), seed_of("c")), (11, 22, 33));
}

#[test]
fn outputs_embed_hash_and_seed_and_rerun_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "scenarios",
        "--out",
        "a",
        "--jobs",
        "3",
        "--set",
        "scenario.n_reps=3",
        "--set",
        "scenario.pool_size=2",
        "--set",
        "scenario.cells=1",
        "--set",
        "net.n=60",
    ];
    let o = hanam(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    let hash = m["config_hash"].as_str().unwrap().to_string();
    for f in ["metrics.csv", "replicates.csv"] {
        let text = std::fs::read_to_string(dir.path().join("a").join(f)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_hash={hash} seed=1"), "{f}");
    }
    let o = hanam(dir.path(), &["rerun", "a/manifest.json", "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "replicates.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}
