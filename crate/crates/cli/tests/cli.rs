use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffsense_core::closed_form::{tau_star, TauStarMethod};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diffsense"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(sub).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let i = rd.headers().unwrap().iter().position(|h| h == name).unwrap();
    rd.records().map(|r| r.unwrap()[i].to_string()).collect()
}

const SCAN: &str = r#"
experiment = "scan-tau"
seed = 3
n_atoms = [60]
tau = { unit = "tau-star", values = [0.0, 1.0] }
dphi = [0.4, 0.8]
shots = [100]
ellipses = 6
methods = ["trace", "one_parameter"]
"#;

#[test]
fn scan_writes_every_grid_row_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan.cfg", SCAN);
    let out = dir.path().join("out");
    let o = run("scan-tau", &cfg, &out, &["--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(column(&out.join("results.csv"), "status").iter().all(|s| s == "ok"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["points"].as_array().unwrap().len(), 4);
}

#[test]
fn results_do_not_depend_on_worker_count_and_manifest_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan.cfg", SCAN);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run("scan-tau", &cfg, &a, &["--workers", "1"]).status.success());
    assert!(run("scan-tau", &cfg, &b, &["--workers", "3"]).status.success());
    assert!(run("scan-tau", &a.join("manifest.json"), &c, &["--workers", "2"]).status.success());
    let first = std::fs::read(a.join("results.csv")).unwrap();
    assert_eq!(first, std::fs::read(b.join("results.csv")).unwrap());
    assert_eq!(first, std::fs::read(c.join("results.csv")).unwrap());
}

#[test]
fn seed_override_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan.cfg", SCAN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("scan-tau", &cfg, &a, &["--seed", "4"]).status.success());
    assert!(run("scan-tau", &cfg, &b, &[]).status.success());
    assert_ne!(column(&a.join("results.csv"), "mean"), column(&b.join("results.csv"), "mean"));
    assert!(column(&a.join("results.csv"), "seed").iter().all(|s| s == "4"));
}

#[test]
fn tau_star_units_resolve_to_the_balance_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan.cfg", SCAN);
    let o = bin().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let taus: Vec<f64> = v["points"].as_array().unwrap().iter().map(|p| p["tau_a"].as_f64().unwrap()).collect();
    assert_eq!(taus[0], 0.0);
    assert_eq!(taus[2], tau_star(60, TauStarMethod::ExactBalance).unwrap());
    assert!(v["applied_defaults"].as_array().unwrap().iter().any(|d| d.as_str().unwrap().starts_with("table_nodes")));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing_seed = write_config(dir.path(), "a.cfg", "experiment = \"campaign\"\nn_atoms = [50]\n");
    let o = run("campaign", &missing_seed, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["messages"].to_string().contains("seed"));

    let cfg = write_config(dir.path(), "scan.cfg", SCAN);
    assert_eq!(run("fisher", &cfg, &out, &[]).status.code(), Some(2));
    assert_eq!(run("scan-tau", &cfg, &out, &["--workers", "0"]).status.code(), Some(2));
    let typo = write_config(dir.path(), "b.cfg", "experiment = \"campaign\"\nseed = 1\nn_atom = [50]\n");
    assert_eq!(run("campaign", &typo, &out, &[]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn rejected_fits_are_tagged_and_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "part.cfg",
        "experiment = \"campaign\"\nseed = 1\nn_atoms = [100]\nshots = [5]\nellipses = 3\ndphi = [0.5]\n",
    );
    let out = dir.path().join("out");
    let o = run("campaign", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let status = column(&out.join("results.csv"), "status");
    assert_eq!(status.len(), 1);
    assert_ne!(status[0], "ok");
    assert!(!column(&out.join("results.csv"), "error")[0].is_empty());
}

#[test]
fn sampled_ellipses_can_be_refitted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        "experiment = \"sample\"\nseed = 2\nn_atoms = [50]\nshots = [80]\nellipses = 2\ndphi = [0.9]\nmethods = [\"fringe\"]\n",
    );
    let out = dir.path().join("samples");
    assert!(run("sample", &cfg, &out, &[]).status.success());
    let csv_sample = out.join("samples").join("p0_e1.csv");
    let json_sample = out.join("samples").join("p0_e1.json");
    let a = diffsense::io::read_sample_file(&csv_sample).unwrap();
    assert_eq!(a, diffsense::io::read_sample_file(&json_sample).unwrap());
    assert_eq!(a.len(), 80);
    assert!(a.phase_record.is_some());

    let fit_cfg = write_config(
        dir.path(),
        "f.cfg",
        &format!(
            "experiment = \"fit\"\nseed = 2\ninput = {:?}\nmethods = [\"trace\", \"geometric\", \"fringe\"]\n",
            csv_sample.to_str().unwrap()
        ),
    );
    let fitted = dir.path().join("fit");
    let o = run("fit", &fit_cfg, &fitted, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est: Vec<f64> = column(&fitted.join("results.csv"), "dphi_est").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(est.len(), 3);
    assert!(est.iter().all(|e| (e - 0.9).abs() < 0.5), "{est:?}");
}
