use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparse-drift"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate_to(path: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate", "--d", "2", "--theta0", "1.0,0,-0.5", "--base-coeff", "1", "--T", "40", "--dt", "0.01", "--seed", "4",
        "--out", path.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn theta_of(json: &str) -> Vec<f64> {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["theta"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["simulate", "estimate", "experiment", "diagnose"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one_and_name_the_flag() {
    let o = run(&["simulate", "--d", "1", "--theta0", "1", "--T", "1", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));

    let o = run(&["simulate", "--d", "1", "--theta0", "1", "--T", "1", "--p", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--p"));

    let o = run(&["simulate", "--d", "1", "--theta0", "1,x", "--T", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--theta0"));

    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(simulate_to(&a, &["--record-noise"]).status.success());
    assert!(simulate_to(&b, &["--record-noise"]).status.success());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("t,x1,x2,w1,w2\n"));
    assert_eq!(text.lines().count(), 1 + 4001);
}

#[test]
fn theta0_can_come_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let theta = dir.path().join("theta.csv");
    fs::write(&theta, "1.0\n0\n-0.5\n").unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(simulate_to(&a, &[]).status.success());
    let o = run(&[
        "simulate", "--d", "2", "--theta0", theta.to_str().unwrap(), "--base-coeff", "1", "--T", "40", "--dt", "0.01",
        "--seed", "4", "--out", b.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&a).unwrap(), fs::read_to_string(&b).unwrap());
}

#[test]
fn lasso_at_zero_penalty_matches_mle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    assert!(simulate_to(&path, &[]).status.success());
    let est = |method: &str, extra: &[&str]| {
        let mut args = vec!["estimate", "--input", path.to_str().unwrap(), "--p", "3", "--base-coeff", "1", "--method", method];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    let lasso = est("lasso", &["--lambda", "0"]);
    let mle = est("mle", &[]);
    let (a, b) = (theta_of(&lasso), theta_of(&mle));
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-8, "{a:?} vs {b:?}");
    }
    let v: serde_json::Value = serde_json::from_str(&lasso).unwrap();
    for key in ["method", "lambda", "kkt_residual", "converged", "iterations"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["method"], "Lasso");
    assert_eq!(v["converged"], true);

    let cv = est("adalasso", &["--cv", "--grid-size", "8", "--cv-folds", "4"]);
    let v: serde_json::Value = serde_json::from_str(&cv).unwrap();
    assert_eq!(v["method"], "AdaptiveLasso");
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-6);

    let marginal = est("marginal", &[]);
    assert_eq!(theta_of(&marginal).len(), 3);
}

#[test]
fn estimate_reports_missing_penalty_and_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    assert!(simulate_to(&path, &[]).status.success());
    let o = run(&["estimate", "--input", path.to_str().unwrap(), "--p", "3", "--method", "lasso"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--lambda"));

    let o = run(&["estimate", "--input", path.to_str().unwrap(), "--p", "3", "--lambda", "1", "--cv"]);
    assert_eq!(o.status.code(), Some(1));

    let missing = dir.path().join("missing.csv");
    let o = run(&["estimate", "--input", missing.to_str().unwrap(), "--p", "3", "--method", "mle"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn experiment_writes_results_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.ini");
    fs::write(
        &cfg,
        "kind = support_curve\nd = 2\np = 8\nsparsity = 0.75\nT_values = 4, 6\nreps = 2\nburn_in = 1\ngrid_size = 8\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["experiment", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(data.len(), 2 * 2 * 3);

    fs::write(&cfg, "kind = support_curve\nreps: 3\n").unwrap();
    let o = run(&["experiment", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn diagnose_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("diag.ini");
    fs::write(
        &cfg,
        "kind = diagnostics\n[dict]\nd = 1\np = 1\nbase_coeff = 1\n[experiment]\ntheta0 = 1\nT = 5\nburn_in = 1\nx_grid = 0, 0.5, 1, 2\n",
    )
    .unwrap();
    let out = dir.path().join("report.csv");
    let o = run(&["diagnose", "--config", cfg.to_str().unwrap(), "--reps", "100", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("x,empirical_C,bound_lemma61,empirical_eps,bound_prop64,flag\n"));
    assert_eq!(text.lines().count(), 5);

    let o = run(&["diagnose", "--config", cfg.to_str().unwrap(), "--reps", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["diagnose", "--config", cfg.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ini") {
            sparse_drift::experiments::ExperimentConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 5);
}
