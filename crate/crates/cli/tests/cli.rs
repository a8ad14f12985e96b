use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn xdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xdiff"))
        .args(args)
        .env_remove("XDIFF_THREADS")
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, study: &str, noise: &str) -> PathBuf {
    let path = dir.join("cfg.json");
    let text = format!(
        r#"{{
        "model": {{"n": 2, "delta": 1.0, "A": [[2, 1], [1, 2]], "noise": {noise}}},
        "grid": {{"J": 16}},
        "time": {{"dt": 1e-4, "T": 0.01}},
        "ensemble": {{"samples": 4, "seed": 5}},
        "study": {study},
        "output": {{"dir": "{}"}}
    }}"#,
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

#[test]
fn check_model_reports_cyclic_matrix() {
    let o = xdiff(&["check-model", "--matrix", "[[0,1,0],[0,0,1],[1,0,0]]"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("detailed balance: NOT satisfied"), "{text}");
    assert!(text.contains("right half-plane: NO"), "{text}");
}

#[test]
fn check_model_reads_config() {
    let cfg = configs().join("two_species.json");
    let o = xdiff(&["check-model", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("detailed balance: satisfied, pi = [1.0, 1.0]"), "{text}");
    assert!(text.contains("right half-plane: yes"), "{text}");
}

#[test]
fn bundled_configs_validate() {
    for name in ["two_species.json", "two_species_space.json", "two_species_longtime.json", "three_species_cyclic.json"] {
        let cfg = configs().join(name);
        let o = xdiff(&["check-model", "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn simulate_writes_series_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"{"kind": "simulate", "record_every": 20}"#, r#"{"kind": "diagonal_sqrt", "c": 0.01}"#);
    let out = dir.path().join("run");
    let o = xdiff(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let body = std::fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next().unwrap(), "# seed=9");
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    let rows = data_rows(&out.join("series.csv"));
    assert_eq!(rows[0], "sample,t,species,l2_norm,mass,min_value,rao_entropy,rel_entropy");
    // records at steps 0, 20, ..., 100 for two species
    assert_eq!(rows.len(), 1 + 6 * 2);
    assert!(!out.join("fit.csv").exists());
}

#[test]
fn convergence_time_writes_tables_and_threads_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        r#"{"kind": "convergence_time", "levels": [1e-3, 5e-4], "reference": 1e-4}"#,
        r#"{"kind": "diagonal_sqrt", "c": 0.05}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = cfg.to_str().unwrap();
    let o = xdiff(&["convergence-time", "--config", cfg, "--out", a.to_str().unwrap(), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_xdiff"))
        .args(["convergence-time", "--config", cfg, "--out", b.to_str().unwrap()])
        .env("XDIFF_THREADS", "8")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["convergence.csv", "fit.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let rows = data_rows(&a.join("convergence.csv"));
    assert_eq!(rows[0], "level,h,mean_error,std_error,n_valid,n_aborted");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,0.001,"));
    assert!(rows[1].ends_with(",4,0"));
    let fit = data_rows(&a.join("fit.csv"));
    assert_eq!(fit[0], "study,slope,intercept,r_squared");
    assert!(fit[1].starts_with("convergence_time,"));
}

#[test]
fn single_level_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        r#"{"kind": "convergence_time", "levels": [1e-3], "reference": 1e-4}"#,
        r#"{"kind": "off"}"#,
    );
    let o = xdiff(&["convergence-time", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("study.levels"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_malformed_json_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"model\": {\"n\": 2,\n \"delta\": }").unwrap();
    let o = xdiff(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let cfg = small_config(dir.path(), r#"{"kind": "simulate", "colour": 1}"#, r#"{"kind": "off"}"#);
    let o = xdiff(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn bad_threads_and_missing_args_exit_one() {
    let cfg = configs().join("two_species.json");
    let o = xdiff(&["simulate", "--config", cfg.to_str().unwrap(), "--threads", "zero"]);
    assert_eq!(o.status.code(), Some(1));
    let o = xdiff(&["simulate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn blow_up_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(
        &path,
        r#"{
        "model": {"n": 2, "delta": 0.01, "A": [[2, 1], [1, 2]], "noise": {"kind": "off"}},
        "grid": {"J": 16},
        "time": {"dt": 1e-2, "T": 1},
        "ensemble": {"samples": 1, "seed": 1},
        "study": {"kind": "simulate"},
        "output": {"dir": "unused"}
    }"#,
    )
    .unwrap();
    let o = xdiff(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn longtime_without_weights_marks_entropy_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(
        &path,
        r#"{
        "model": {"n": 3, "delta": 1.0, "A": [[0, 1, 0], [0, 0, 1], [1, 0, 0]],
                  "noise": {"kind": "diagonal_linear", "c": 0.01}},
        "grid": {"J": 16},
        "time": {"dt": 1e-4, "T": 0.01},
        "ensemble": {"samples": 2, "seed": 1},
        "study": {"kind": "longtime", "record_every": 50},
        "output": {"dir": "unused"}
    }"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = xdiff(&["longtime", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fit unavailable"));
    let rows = data_rows(&out.join("series.csv"));
    assert_eq!(rows.len(), 1 + 3 * 3);
    assert!(rows[1..].iter().all(|r| r.starts_with("mean,") && r.ends_with(",NA,NA")));
    assert_eq!(data_rows(&out.join("fit.csv")).len(), 1);
}
