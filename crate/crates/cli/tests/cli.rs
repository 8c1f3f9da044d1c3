use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mpjump(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpjump")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

const SMALL: [&str; 6] = ["--paths", "400", "--dt", "0.1", "--horizon", "50"];

#[test]
fn example_reports_the_closed_form_control() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("ex1");
    let mut args = vec!["example", "--id", "1", "--rho", "0.1", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    let o = mpjump(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out, "report.json");
    assert_eq!(r["u_hat"][0].as_f64(), Some(0.1));
    assert_eq!(r["overall"], "verified");
    assert!(!r["verdicts"].as_array().unwrap().is_empty());
    let meta = json(&out, "meta.json");
    assert_eq!(meta["config_hash"], r["config_hash"]);
    assert_eq!(meta["seed"], 0);
    assert!(meta["wall_time_s"].as_f64().unwrap() >= 0.0);
    for f in ["results.csv", "config.toml", "resolved.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn example4_constants() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("ex4");
    // the adjoint decays at rate lambda_hat (1 - gamma) = 0.065, so the
    // transversality window needs a long horizon
    let o = mpjump(&["example", "--id", "4", "--paths", "200", "--horizon", "50", "--dt", "0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out, "report.json");
    assert!((r["closed_forms"]["u_hat"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((r["closed_forms"]["lambda_hat"].as_f64().unwrap() - 0.13).abs() < 1e-12);
}

#[test]
fn missing_n_paths_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let o = mpjump(&["simulate", "--example", "1", "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n_paths"), "{}", stderr(&o));
}

#[test]
fn bad_keys_and_values_name_the_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "example = 1\nn_paths = 10\ngrid.horizon = 5.0\ngrid.dt = 0.1\nbogus = 3\n").unwrap();
    let o = mpjump(&["simulate", "--config", cfg.to_str().unwrap(), "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let o = mpjump(&["simulate", "--config", cfg.to_str().unwrap(), "--set", "bogus=", "--paths", "0"]);
    assert_eq!(code(&o), 2);

    fs::write(&cfg, "example = 1\nn_paths = 10\ngrid.horizon = 5.0\ngrid.dt = 0.3\n").unwrap();
    let o = mpjump(&["simulate", "--config", cfg.to_str().unwrap(), "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grid.dt"), "{}", stderr(&o));

    let o = mpjump(&["simulate", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let o = mpjump(&["example", "--id", "7", "--paths", "10", "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("example"));
}

#[test]
fn competitor_as_candidate_is_violated() {
    let tmp = TempDir::new().unwrap();
    let good = tmp.path().join("good");
    let mut args = vec!["verify", "--example", "1", "--competitor", "0.2", "--out", good.to_str().unwrap()];
    args.extend(SMALL);
    let o = mpjump(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let bad = tmp.path().join("bad");
    let mut args = vec!["verify", "--example", "1", "--candidate", "0.2", "--competitor", "0.1", "--out", bad.to_str().unwrap()];
    args.extend(SMALL);
    let o = mpjump(&args);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let r = json(&bad, "report.json");
    assert!(r["report"]["hamiltonian_gap"]["max_gap"].as_f64().unwrap() > 0.0);
    assert_eq!(r["overall"], "violated");
    assert_eq!(json(&bad, "meta.json")["exit_code"], 4);
    let csv = fs::read_to_string(bad.join("results.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("condition,"));
    assert!(csv.contains("hamiltonian_gap,"));
}

#[test]
fn two_dimensional_competitor() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("v4");
    let o = mpjump(&[
        "verify", "--example", "4", "--competitor", "1.5,0.13", "--competitor", "2.0,0.2", "--paths", "300", "--horizon", "50",
        "--dt", "0.1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out, "report.json");
    assert_eq!(r["inputs"]["competitors"].as_array().unwrap().len(), 2);
    let o = mpjump(&["verify", "--example", "4", "--competitor", "1.5,0.13,2", "--paths", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ladder_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let base = ["--example", "1", "--paths", "500", "--dt", "0.1"];
    // rungs 10, 20, 40 are still 30% apart on [0, 10] when rho = 0.1
    let out = tmp.path().join("short");
    let mut args = vec!["bsde", "--out", out.to_str().unwrap()];
    args.extend(base);
    let o = mpjump(&args);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let r = json(&out, "report.json");
    assert_eq!(r["ladder"]["converged"], false);

    let out = tmp.path().join("long");
    let mut args = vec![
        "bsde", "--horizon", "80", "--set", "bsde.horizons=[10, 40, 80]", "--tolerance", "0.05", "--out", out.to_str().unwrap(),
    ];
    args.extend(base);
    let o = mpjump(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out, "report.json");
    assert_eq!(r["ladder"]["converged"], true);
    // coarse grid and few paths: a loose sanity bound only
    assert!(r["relative_rms_vs_analytic"].as_f64().unwrap() < 0.1);

    let out = tmp.path().join("lambda");
    let mut args = vec!["bsde", "--set", "bsde.lambda=-1", "--out", out.to_str().unwrap()];
    args.extend(base);
    let o = mpjump(&args);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lambda"));
    assert!(json(&out, "report.json")["error"].as_str().unwrap().contains("lambda"));
}

#[test]
fn rerun_from_the_echo_is_bit_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "subcommand = \"simulate\"\nexample = 3\nn_paths = 30\nseed = 9\n\n[grid]\nhorizon = 4.0\nn_steps = 40\nsubsteps = 2\n",
    )
    .unwrap();
    let a = tmp.path().join("a");
    let o = mpjump(&["run", "--config", cfg.to_str().unwrap(), "--set", "params.jump_intensity=1.5", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(a.join("config.toml")).unwrap(), fs::read_to_string(&cfg).unwrap());

    let b = tmp.path().join("b");
    let o = mpjump(&["run", "--config", a.join("resolved.toml").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (ra, rb) = (fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
    assert_eq!(ra, rb);
    let text = String::from_utf8(ra).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert_eq!(text.lines().nth(1), Some("path_id,t,X_1,X_2,u_1"));
    assert_eq!(text.lines().count(), 2 + 30 * 21);
    assert_eq!(json(&a, "meta.json")["config_hash"], json(&b, "meta.json")["config_hash"]);

    let c = tmp.path().join("c");
    let o = mpjump(&["run", "--config", a.join("resolved.toml").to_str().unwrap(), "--seed", "10", "--out", c.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(c.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
}

#[test]
fn check_detects_mismatched_hashes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("s");
    let o = mpjump(&["simulate", "--example", "2", "--paths", "20", "--horizon", "2", "--dt", "0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&mpjump(&["check", out.to_str().unwrap()])), 0);

    let resolved = out.join("resolved.toml");
    let text = fs::read_to_string(&resolved).unwrap();
    fs::write(&resolved, text.replace("n_paths = 20", "n_paths = 21")).unwrap();
    let o = mpjump(&["check", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("results.csv"));
}
