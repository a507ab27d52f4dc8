use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_advsysid"));
    cmd.env_remove("ADVSYSID_SEED");
    cmd
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &std::path::Path, json: String) -> PathBuf {
    let path = dir.join("c.json");
    fs::write(&path, json).unwrap();
    path
}

fn small_hybrid(extra: &str) -> String {
    format!(
        r#"{{
  "schema": "advsysid-config/1",
  "system": {{"kind": "random", "n": 6, "m": 1, "r": 2, "spectral_norm": 0.5}},
  "k": 6,
  "sigma": 10.0,
  "attack": {{"kind": "sign_adaptive", "p": 0.05}},
  "t_total": 120,
  "t_star": 60,
  "seed": 3,
  "replicates": 3{extra}
}}"#
    )
}

#[test]
fn bounds_prints_theory_quantities() {
    let out = run(bin().args(["bounds", "--config"]).arg(config("hybrid_desk")));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for key in ["q = ", "nu = ", "t_star_scale = ", "error_bound = "] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
}

#[test]
fn missing_config_exits_1() {
    let out = run(bin().args(["hybrid", "--config", "/nonexistent/c.json"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cannot read configuration"));
    let out = run(bin().arg("batch"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--config"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let out = run(bin().args(["hybrid", "--bogus"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
    let out = run(bin().args(["hybrid", "--format", "json"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small_hybrid(r#", "d": 5"#));
    let out = run(bin().arg("hybrid").arg("--config").arg(&cfg).arg("--out").arg(dir.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("truncation order"));
}

#[test]
fn unstable_system_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{
  "schema": "advsysid-config/1",
  "system": {"kind": "explicit", "a": [[1.5]], "b": [[1.0]], "c": [[1.0]], "d": [[0.0]]},
  "k": 4,
  "sigma": 1.0,
  "attack": {"kind": "none"},
  "t_total": 40,
  "t_star": 20,
  "d": 1,
  "seed": 1
}"#,
    )
    .unwrap();
    let out = run(bin().arg("hybrid").arg("--config").arg(&cfg).arg("--out").arg(dir.path()));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

fn hybrid_csv(workers: &str, seed: Option<&str>, env_seed: Option<&str>) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = bin();
    cmd.args(["hybrid", "--replicates", "8", "--workers", workers, "--config"])
        .arg(config("hybrid_desk"))
        .arg("--out")
        .arg(dir.path());
    if let Some(s) = seed {
        cmd.args(["--seed", s]);
    }
    if let Some(s) = env_seed {
        cmd.env("ADVSYSID_SEED", s);
    }
    let out = run(&mut cmd);
    assert!(out.status.success(), "{}", stderr(&out));
    fs::read(dir.path().join("hybrid.csv")).unwrap()
}

#[test]
fn hybrid_output_is_independent_of_workers() {
    let one = hybrid_csv("1", None, None);
    let four = hybrid_csv("4", None, None);
    assert_eq!(one, four);
    let text = String::from_utf8(one).unwrap();
    assert!(text.starts_with("t,estimator,err_fro,err_spec,hankel_err,d_err,objective,seed,k\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("400,batch_l2,")).count(), 8);
}

#[test]
fn seed_flag_beats_environment() {
    let base = hybrid_csv("2", None, None);
    let env = hybrid_csv("2", None, Some("77"));
    let flag = hybrid_csv("2", Some("77"), None);
    let both = hybrid_csv("2", Some("77"), Some("12345"));
    assert_ne!(base, env);
    assert_eq!(env, flag);
    assert_eq!(flag, both);
}

#[test]
fn no_oracle_stream_reports_objectives_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        small_hybrid(r#", "stream": {"rules": ["best", "projected"], "beta": 1.0, "radius": 20.0}"#),
    );
    let out = run(bin()
        .args(["stream", "--no-oracle", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path()));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("stream.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[1], "stream_projected");
        assert!(f[2].is_empty() && f[3].is_empty());
    }
}

#[test]
fn simulate_and_batch_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small_hybrid(""));
    let out = run(bin().arg("simulate").arg("--config").arg(&cfg).arg("--out").arg(dir.path()));
    assert!(out.status.success(), "{}", stderr(&out));
    for i in 0..3 {
        let text = fs::read_to_string(dir.path().join(format!("trajectory_{i:03}.csv"))).unwrap();
        assert!(text.starts_with("advsysid-traj v1\nt,u_1,y_1,y_2,xi,"));
        assert_eq!(text.lines().count(), 2 + 120);
    }
    let out = run(bin().arg("batch").arg("--config").arg(&cfg).arg("--out").arg(dir.path()));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("batch.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}
