use std::fs;
use std::path::Path;
use std::process::Command;

fn homlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_homlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: serde_json::Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn torus_config(out: &Path) -> serde_json::Value {
    serde_json::json!({
        "experiment": "correctors",
        "grid": { "n": 16, "extent": 4.0 },
        "ensemble": { "lambda": 0.5, "corr_len": 1.0, "master_seed": 1, "n_samples": 2 },
        "fixture": { "kind": "constant", "value": 2.0 },
        "outputs": out,
    })
}

#[test]
fn correctors_on_a_constant_fixture_emit_scaled_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), torus_config(&out));
    let res = homlab(&["correctors", "--config", &cfg, "--workers", "1"]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let table = fs::read_to_string(out.join("correctors.csv")).unwrap();
    let row: Vec<f64> = table
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[1] - 2.0).abs() < 1e-12 && row[2].abs() < 1e-12);
    assert!(row[3].abs() < 1e-12 && (row[4] - 2.0).abs() < 1e-12);

    let report = homlab(&["report", "--out", out.to_str().unwrap()]);
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("correctors"));
}

#[test]
fn seed_override_and_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = torus_config(&dir.path().join("ignored"));
    body["fixture"] = serde_json::json!({ "kind": "gaussian" });
    body["experiment"] = serde_json::json!("field");
    let cfg = write_config(dir.path(), body);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "3"), (&b, "4")] {
        let res = homlab(&[
            "field",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let read = |d: &Path| fs::read(d.join("fields/sample_0.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
    let echo: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("result.json")).unwrap()).unwrap();
    assert_eq!(echo["master_seed"], 3);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = torus_config(&dir.path().join("out"));
    body["unknown_key"] = serde_json::json!(true);
    let cfg = write_config(dir.path(), body);
    assert_eq!(
        homlab(&["correctors", "--config", &cfg]).status.code(),
        Some(2)
    );

    let mut body = torus_config(&dir.path().join("out"));
    body["grid"]["shape"] = serde_json::json!("unit-square");
    body["epsilons"] = serde_json::json!([0.3]);
    let cfg = write_config(dir.path(), body);
    assert_eq!(
        homlab(&["homogenize", "--config", &cfg]).status.code(),
        Some(2)
    );
    assert_eq!(homlab(&["correctors"]).status.code(), Some(2));
}

#[test]
fn solver_failures_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = torus_config(&dir.path().join("out"));
    body["fixture"] = serde_json::json!({ "kind": "gaussian" });
    body["solver"] = serde_json::json!({ "max_iter": 1 });
    let cfg = write_config(dir.path(), body);
    let res = homlab(&["correctors", "--config", &cfg]);
    assert_eq!(
        res.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(String::from_utf8_lossy(&res.stderr).contains("sample"));
}
