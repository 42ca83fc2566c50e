use std::path::Path;

use homlab::experiment::{run, ExperimentConfig, ExperimentResult};
use homlab::io::read_csv;

fn config(kind: &str, out: &Path, extra: serde_json::Value) -> ExperimentConfig {
    let mut body = serde_json::json!({
        "experiment": kind,
        "grid": { "n": 32, "extent": 1.0, "shape": "unit-square", "cells_per_micro": 2 },
        "ensemble": { "lambda": 0.5, "corr_len": 1.0, "master_seed": 9, "n_samples": 2 },
        "epsilons": [0.0625, 0.03125],
        "outputs": out,
        "n_boot": 50,
    });
    for (k, v) in extra.as_object().unwrap() {
        body[k] = v.clone();
    }
    let cfg: ExperimentConfig = serde_json::from_value(body).unwrap();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn cz_sweep_writes_quenched_and_annealed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "cz",
        dir.path(),
        serde_json::json!({
            "ensemble": { "lambda": 0.5, "corr_len": 1.0, "master_seed": 9, "n_samples": 8 },
            "epsilons": [0.0625],
        }),
    );
    let res = run(&cfg).unwrap();
    let (header, rows) = read_csv(&res.csv["cz"]).unwrap();
    assert_eq!(header[0], "flavor");
    // three quenched exponents per sample, then the ensemble functionals
    assert_eq!(rows.len(), 8 * 3 + 3);
    let flavors: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert!(flavors.contains(&"quenched-a") && flavors.contains(&"weighted-d"));
    for r in &rows {
        let ratio: f64 = r[8].parse().unwrap();
        assert!(ratio.is_finite() && ratio > 0.0, "{r:?}");
    }
}

#[test]
fn minrad_run_reports_floor_and_moments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "minrad",
        dir.path(),
        serde_json::json!({
            "grid": { "n": 32, "extent": 8.0 },
            "ensemble": { "lambda": 0.5, "corr_len": 1.0, "master_seed": 9, "n_samples": 8 },
        }),
    );
    let res = run(&cfg).unwrap();
    let (_, rows) = read_csv(&res.csv["minrad"]).unwrap();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        assert_eq!(r[4], "1", "floor holds");
        assert_eq!(r[5], "1", "theta monotonicity holds");
        assert_eq!(r[6].parse::<f64>().unwrap(), 1.0);
    }
    assert!(res.summaries.contains_key("minrad_moments"));
    // the report reads back exactly what the run computed
    assert_eq!(ExperimentResult::load(dir.path()).unwrap(), res);

    // a second run reads every sample back from the cache
    let again = run(&cfg).unwrap();
    assert_eq!(
        again.summaries["minrad_moments"],
        res.summaries["minrad_moments"]
    );
}

#[test]
fn fluctuation_sweep_with_constant_coefficients_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "fluctuation",
        dir.path(),
        serde_json::json!({
            "grid": { "n": 32, "extent": 2.0, "shape": "unit-square", "cells_per_micro": 2 },
            "fixture": { "kind": "constant", "value": 0.8 },
            "epsilons": [0.125, 0.0625],
        }),
    );
    let res = run(&cfg).unwrap();
    let (_, rows) = read_csv(&res.csv["fluctuation"]).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn failing_pair_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("homogenize", dir.path(), serde_json::json!({}));
    cfg.solver.max_iter = 2;
    let err = run(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("epsilon") && msg.contains("sample"), "{msg}");
    assert!(matches!(err.root(), homlab::Error::SolverFailure { .. }));
}
