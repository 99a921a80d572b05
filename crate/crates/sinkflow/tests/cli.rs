use std::path::Path;
use std::process::Command;

use sinkflow::config::{Format, InitialSpec, PotentialSpec, SpaceSpec};
use sinkflow::export::{self, FrameRecord};
use sinkflow::{preset, run_scenario, vertical_cost_curve, ConfigError, ExperimentConfig, RunOptions, SchemeName};

fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = preset("convex1d", dir).unwrap();
    cfg.space = SpaceSpec::Interval { lo: 0.0, hi: 1.0, n: 20 };
    cfg.epsilon = 0.05;
    cfg.tau = 0.01;
    cfg.horizon = 0.2;
    cfg.solver.record_every = 2;
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sinkflow"))
}

#[test]
fn unknown_fields_and_versions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let good = small(dir.path()).to_json();
    assert!(ExperimentConfig::from_json(&good).is_ok());

    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["colour"] = serde_json::json!("blue");
    assert!(matches!(ExperimentConfig::from_json(&v.to_string()), Err(ConfigError::Parse(_))));

    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["version"] = serde_json::json!(2);
    let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
    assert!(err.to_string().contains("`version`"), "{err}");
}

#[test]
fn validation_names_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(Box<dyn Fn(&mut ExperimentConfig)>, &str)> = vec![
        (Box::new(|c| c.space = SpaceSpec::Interval { lo: 0.0, hi: 1.0, n: 1 }), "space.n"),
        (Box::new(|c| c.horizon = 0.0), "horizon"),
        (Box::new(|c| c.epsilon = -1.0), "epsilon"),
        (Box::new(|c| c.solver.lcp_tol = 0.0), "solver.lcp_tol"),
        (Box::new(|c| c.initial = InitialSpec::Gaussian { mean: vec![0.1, 0.2], sd: 0.1 }), "initial.mean"),
        (Box::new(|c| c.potential = PotentialSpec::Table { values: vec![1.0] }), "potential.values"),
        (Box::new(|c| c.sphere_export = true), "sphere_export"),
    ];
    for (edit, name) in cases {
        let mut cfg = small(dir.path());
        edit(&mut cfg);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains(&format!("`{name}`")), "{name}: {err}");
    }
}

#[test]
fn presets_are_valid_and_round_trip_through_json() {
    let dir = tempfile::tempdir().unwrap();
    for name in sinkflow::PRESETS {
        let cfg = preset(name, dir.path()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
    assert!(preset("nope", dir.path()).is_none());
}

#[test]
fn exported_records_read_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let report = run_scenario(&cfg, &RunOptions::default()).unwrap();
    assert!(report.converged());
    let recs = export::read_jsonl(&dir.path().join("trajectory.jsonl")).unwrap();
    assert_eq!(recs.len(), 11);
    let path = dir.path().join("again.jsonl");
    export::write_jsonl(&path, &recs).unwrap();
    assert_eq!(export::read_jsonl(&path).unwrap(), recs);
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("trajectory.jsonl")).unwrap());

    assert!(recs[0].speed_hc.is_none());
    assert!(recs[1..].iter().all(|r| r.speed_hc.unwrap() > 0.0));
    assert!(recs.iter().all(|r| r.b.as_ref().unwrap().len() == 20 && r.pressure_min.unwrap() <= 0.0));

    let rows = export::read_summary(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(rows.len(), recs.len());
    assert!(rows.windows(2).all(|w| w[1].energy <= w[0].energy + 1e-12));
    assert!(rows.iter().all(|r| r.hc_norm_residual.unwrap() < 1e-8));
}

#[test]
fn empty_trajectories_give_header_only_files() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, jsonl) = (dir.path().join("s.csv"), dir.path().join("t.jsonl"));
    export::write_summary(&csv, &[]).unwrap();
    export::write_jsonl(&jsonl, &[] as &[FrameRecord]).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), format!("{}\n", export::SUMMARY_HEADER));
    assert_eq!(std::fs::read_to_string(&jsonl).unwrap(), "");
    assert!(export::read_summary(&csv).unwrap().is_empty());
    assert!(export::read_jsonl(&jsonl).unwrap().is_empty());
}

#[test]
fn frame_selection_keeps_the_last_frame() {
    assert_eq!(export::frame_selection(7, 3), vec![0, 3, 6]);
    assert_eq!(export::frame_selection(8, 3), vec![0, 3, 6, 7]);
    assert!(export::frame_selection(0, 3).is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = small(a.path());
    ca.initial = InitialSpec::Random;
    ca.seed = 17;
    let mut cb = ca.clone();
    cb.output.dir = b.path().to_path_buf();
    let ra = run_scenario(&ca, &RunOptions::default()).unwrap();
    run_scenario(&cb, &RunOptions::default()).unwrap();
    assert!(ra.files.len() > 3);
    for f in &ra.files {
        let name = f.file_name().unwrap();
        if name == "config.json" {
            continue; // echoes the output directory
        }
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn lagrangian_runs_export_positions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.scheme = SchemeName::SjkoLagrangian;
    cfg.tau = 0.05;
    cfg.solver.particles = 6;
    cfg.solver.record_every = 1;
    cfg.output.formats = vec![Format::Jsonl, Format::Csv];
    let report = run_scenario(&cfg, &RunOptions::default()).unwrap();
    assert!(report.converged());
    let recs = export::read_jsonl(&dir.path().join("trajectory.jsonl")).unwrap();
    assert_eq!(recs.len(), 5);
    for r in &recs {
        assert_eq!(r.positions.as_ref().unwrap().len(), 6);
        assert!(r.weights.is_none() && r.b.is_none() && r.speed_hc.is_none() && r.pressure_min.is_none());
    }
    assert!(!dir.path().join("config.json").exists());
}

#[test]
fn vertical_cost_is_positive_symmetric_and_grows_at_the_ends() {
    let ms = [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99];
    let curve = vertical_cost_curve(&[0.0], &[1.0], 0.5, &ms).unwrap();
    for (k, &(m, c)) in curve.iter().enumerate() {
        assert_eq!(m, ms[k]);
        assert!(c.is_finite() && c > 0.0);
        let mirror = curve[ms.len() - 1 - k].1;
        assert!((c - mirror).abs() <= 1e-8 * c, "{m}: {c} vs {mirror}");
    }
    assert!(curve[0].1 > curve[3].1);
    // Swapping the points flips sigma; the quadratic form does not see the sign.
    let swapped = vertical_cost_curve(&[1.0], &[0.0], 0.5, &[0.3]).unwrap();
    assert!((swapped[0].1 - curve[4].1).abs() <= 1e-8 * curve[4].1);
    assert!(vertical_cost_curve(&[0.0], &[0.0], 0.5, &[0.3]).is_err());
}

#[test]
fn binary_runs_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&dir.path().join("out"));
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/summary.csv").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("trajectory.jsonl"));
}

#[test]
fn binary_reports_bad_input() {
    let out = bin().args(["scenario", "nope"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"version": 1}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn nonconvergence_fails_unless_best_effort() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("out"));
    cfg.scheme = SchemeName::SjkoEulerian;
    cfg.tau = 0.05;
    cfg.horizon = 0.1;
    cfg.solver.inner_max_iter = 1;
    cfg.solver.inner_tol = Some(1e-14);
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin().args(["run", "--best-effort", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success());
}

#[test]
fn scenario_overrides_reach_the_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["scenario", "sphere3", "--tau", "0.01", "--tmax", "0.1", "--epsilon", "0.4", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!((cfg.tau, cfg.horizon, cfg.epsilon, cfg.seed), (0.01, 0.1, 0.4, 3));
    let sphere = std::fs::read_to_string(dir.path().join("sphere.csv")).unwrap();
    let mut lines = sphere.lines();
    assert_eq!(lines.next(), Some("t,y1,y2,y3"));
    for l in lines {
        let y: Vec<f64> = l.split(',').skip(1).map(|s| s.parse().unwrap()).collect();
        assert!((y.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-8);
    }
}
