use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = r#"
[sup_sampler]
count = 256

[quadrature]
mc_count = 20000

[sde]
n_paths = 4000
dt = 0.01

[solver]
nodes = 401

[suite]
lambdas = [2.0]
eps_list = [0.5, 0.1]
contraction_lambdas = [2.0]
contraction_eps = [0.5]
contraction_pairs = 4
contraction_points = 4
check_points = 32
markov_outer = 64
markov_inner = 64
closure = false
"#;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ouperturb"))
        .args(args)
        .current_dir(dir)
        .env("OUPERTURB_THREADS", "2")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn verify_all_passes_and_writes_sorted_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "quick.toml", QUICK);
    let out = run(&["verify-all", "--config", &cfg, "--out", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let reports: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    let ids: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["check_id"].as_str().unwrap()).collect();
    assert!(ids.len() > 30);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));

    let out = run(&["verify-all", "--config", &cfg, "--out", "r.csv"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("check_id,paper_ref,lhs,rhs,margin,pass,seed\n"));
    assert_eq!(csv.lines().count(), ids.len() + 1);
}

#[test]
fn halved_lipschitz_constant_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[drift]\nname = \"tanh_componentwise\"\nk_override = 0.5\n[sup_sampler]\ncount = 128\n",
    );
    let out = run(&["flow-check", "--config", &cfg, "--out", "f.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL flow.lipschitz"));
    let cfg = write(dir.path(), "good.toml", "[sup_sampler]\ncount = 128\n");
    let out = run(&["flow-check", "--config", &cfg, "--out", "f.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn config_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "broken.toml", "seed = 1\n\n[model]\ndim = \"x\"\n");
    let out = run(&["verify-all", "--config", &cfg, "--out", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn ou_eval_writes_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["ou-eval", "--t", "1", "--lambda", "2", "--x", "0", "--out", "o.json"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("o.json")).unwrap()).unwrap();
    let exact = (-(1.0 - (-2.0f64).exp()) / 4.0).exp();
    assert!((v["rt"].as_f64().unwrap() - exact).abs() < 1e-12);
    assert!((v["resolvent"].as_f64().unwrap() - 2.0 * (1.0 - (-0.25f64).exp())).abs() < 1e-9);
    let out = run(&["ou-eval", "--t", "1", "--x", "0,1", "--out", "o.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn resolvent_export_contains_grid_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "quick.toml", QUICK);
    let out = run(
        &["resolvent", "--config", &cfg, "--lambda", "2", "--eps", "0.1", "--f", "cos", "--drift", "tanh", "--out", "s.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(v["grid_values"].as_array().unwrap().len(), 401);
    assert_eq!(v["trace"].as_array().unwrap().len() as u64, v["iterations"].as_u64().unwrap());
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"].as_bool().unwrap() || c["informational"].as_bool().unwrap()));
    let out = run(&["resolvent", "--lambda", "2", "--eps", "0.1", "--f", "nope", "--out", "s.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sde_mc_and_convergence_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["sde-mc", "--t", "0.5", "--lambda", "2", "--dt", "0.01", "--paths", "2000", "--seed", "3", "--out", "m.json"],
        dir.path(),
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(v["transition"]["mc_count"].as_u64(), Some(2000));
    assert!(v["resolvent"]["value"].as_f64().unwrap().abs() <= 0.5);

    let cfg = write(dir.path(), "small.toml", "[sup_sampler]\ncount = 128\n");
    let out = run(
        &["convergence", "--config", &cfg, "--study", "feps", "--values", "0.4,0.2,0.1,0.05", "--out", "t.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(table.starts_with("parameter,value,error,noise,fitted_rate\n"));
    assert_eq!(table.lines().count(), 5);
    let out = run(&["convergence", "--study", "feps", "--values", "0.4,0.2", "--out", "t.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
