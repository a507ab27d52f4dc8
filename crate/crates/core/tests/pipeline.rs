use advsysid::pipeline::experiments::{example2_with, run_batch_curves, THEORY_HEADER};
use advsysid::pipeline::{read_timeline, write_timeline, ExperimentConfig, Replicate, TIMELINE_HEADER};
use advsysid::simkit::{read_binary_log, read_csv, write_binary_log, write_csv};

fn nilpotent(extra: serde_json::Value) -> ExperimentConfig {
    let mut cfg = serde_json::json!({
        "schema": "advsysid-config/1",
        "system": {
            "kind": "explicit",
            "a": [[0.0, 1.0], [0.0, 0.0]],
            "b": [[0.0], [1.0]],
            "c": [[1.0, -0.5]],
            "d": [[0.2]]
        },
        "k": 4,
        "sigma": 1.0,
        "attack": {"kind": "none"},
        "t_total": 80,
        "t_star": 40,
        "d": 2,
        "seed": 11,
        "replicates": 2
    });
    for (key, value) in extra.as_object().unwrap() {
        cfg[key] = value.clone();
    }
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

#[test]
fn clean_batch_curves_are_exact() {
    let cfg = nilpotent(serde_json::json!({
        "samples": 40,
        "record_every": 20,
        "estimators": ["l2", "l1", "least_squares"]
    }));
    let records = run_batch_curves(&cfg, 2).unwrap();
    assert_eq!(records.len(), 2 * 2 * 3);
    for r in &records {
        assert!(r.err_fro.unwrap() < 1e-6, "{r:?}");
        assert!(r.objective.unwrap() < 1e-6, "{r:?}");
    }
}

#[test]
fn timeline_csv_round_trips() {
    let cfg = nilpotent(serde_json::json!({"samples": 30}));
    let records = run_batch_curves(&cfg, 1).unwrap();
    let mut buf = Vec::new();
    write_timeline(&records, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with(TIMELINE_HEADER));
    assert_eq!(read_timeline(&text).unwrap(), records);
}

#[test]
fn trajectory_files_round_trip() {
    let cfg = nilpotent(serde_json::json!({"attack": {"kind": "sign_adaptive", "p": 0.1}}));
    let rep = Replicate::generate(&cfg, 0, cfg.k, cfg.t_total).unwrap();
    let mut bin = Vec::new();
    write_binary_log(&rep.trajectory, &mut bin).unwrap();
    assert_eq!(read_binary_log(bin.as_slice()).unwrap(), rep.trajectory);
    let mut csv = Vec::new();
    write_csv(&rep.trajectory, &mut csv).unwrap();
    let cols = read_csv(csv.as_slice()).unwrap();
    assert_eq!(cols.attack_flags, rep.trajectory.attack_flags);
    assert_eq!(cols.inputs.len(), cfg.t_total);
}

#[test]
fn example2_writes_curves_and_theory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = nilpotent(serde_json::json!({
        "stream": {"rules": ["best", "projected"], "batch_sizes": [1, 5], "beta": 1.0, "radius": 5.0},
        "record_every": 8
    }));
    let paths = example2_with(&cfg, 2, dir.path()).unwrap();
    let curves = std::fs::read_to_string(&paths[0]).unwrap();
    let records = read_timeline(&curves).unwrap();
    let tags: std::collections::BTreeSet<_> = records.iter().map(|r| r.estimator.as_str()).collect();
    assert_eq!(tags.len(), 4, "{tags:?}");
    assert!(records.iter().all(|r| r.t % 8 == 0));
    let theory = std::fs::read_to_string(&paths[1]).unwrap();
    let mut lines = theory.lines();
    assert_eq!(lines.next(), Some(THEORY_HEADER));
    assert_eq!(lines.count(), 2);
}

#[test]
fn replicates_do_not_depend_on_generation_order() {
    let cfg = nilpotent(serde_json::json!({"attack": {"kind": "sign_adaptive", "p": 0.1}}));
    let later = Replicate::generate(&cfg, 1, cfg.k, cfg.t_total).unwrap();
    let _ = Replicate::generate(&cfg, 0, cfg.k, cfg.t_total).unwrap();
    let again = Replicate::generate(&cfg, 1, cfg.k, cfg.t_total).unwrap();
    assert_eq!(later.trajectory, again.trajectory);
    assert_ne!(later.seed, Replicate::generate(&cfg, 0, cfg.k, cfg.t_total).unwrap().seed);
}
