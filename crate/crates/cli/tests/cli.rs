use std::path::Path;
use std::process::{Command, Output};

fn swfqe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swfqe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
experiment = "garnet_sweep"
name = "small"
seeds = 3
gamma = [0.9]
n = 500
iterations = 5
n_states = 10
n_actions = 2
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn preset_prints_its_config() {
    let o = swfqe(&["preset", "garnet_main"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("name = \"garnet_main\""));
    assert!(text.contains("seeds = 50"));
}

#[test]
fn unknown_preset_is_an_error() {
    let o = swfqe(&["preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("baird_095"));
}

#[test]
fn run_writes_results_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = swfqe(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = std::fs::read_to_string(out.join("small.csv")).unwrap();
    let header = results.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(
        header,
        "experiment,seed,kappa,gamma,weighting,k,err_mu,err_behavior,eta_k,diverged,ratio_chi2"
    );
    assert!(results.contains("# config_hash="));
    // 3 seeds x 2 weightings x (K + 1) iterates
    assert_eq!(
        results.lines().filter(|l| !l.starts_with('#')).count(),
        1 + 3 * 2 * 6
    );
    assert!(out.join("small_aggregate.csv").exists());

    let again = swfqe(&["aggregate", out.join("small.csv").to_str().unwrap()]);
    assert!(again.status.success(), "{}", stderr(&again));
    let stdout = String::from_utf8(again.stdout).unwrap();
    let written = std::fs::read_to_string(out.join("small_aggregate.csv")).unwrap();
    let body = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&stdout), body(&written));
}

#[test]
fn unknown_config_key_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\nlearning_rate = 0.1\n"));
    let o = swfqe(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn aggregate_rejects_mangled_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "experiment,seed,gama\nx,0,0.9\n").unwrap();
    let o = swfqe(&["aggregate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_threads_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = swfqe(&["run", "--config", &cfg, "--threads", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("checks.csv");
    let o = swfqe(&["check", "--out", csv.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
    assert!(std::fs::read_to_string(csv)
        .unwrap()
        .contains("check,passed,worst"));
}
