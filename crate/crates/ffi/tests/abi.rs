use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use homlab_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; homlab_last_error_length().max(1)];
    unsafe { homlab_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn grid_handles() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { homlab_grid_periodic(16, 2.0, &mut g) }, HomlabStatus::Ok);
    assert_eq!(unsafe { homlab_grid_n(g) }, 16);
    assert_eq!(unsafe { homlab_grid_cell_count(g) }, 256);
    unsafe { homlab_grid_free(g) };

    let shape = CString::new("l-shape").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { homlab_grid_masked(32, 1.0, shape.as_ptr(), &mut m) }, HomlabStatus::Ok);
    unsafe { homlab_grid_free(m) };

    let bad = CString::new("hexagon").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { homlab_grid_masked(32, 1.0, bad.as_ptr(), &mut m) }, HomlabStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("hexagon"));
}

#[test]
fn null_arguments_are_reported() {
    assert_eq!(unsafe { homlab_grid_periodic(16, 1.0, ptr::null_mut()) }, HomlabStatus::NullPointer);
    assert!(last_error().contains("out"));
    assert_eq!(unsafe { homlab_grid_n(ptr::null()) }, 0);
    let mut t = [0.0; 4];
    assert_eq!(unsafe { homlab_correctors_tensor(ptr::null(), t.as_mut_ptr()) }, HomlabStatus::NullPointer);
    unsafe {
        homlab_grid_free(ptr::null_mut());
        homlab_field_free(ptr::null_mut());
        homlab_correctors_free(ptr::null_mut());
    }
}

#[test]
fn constant_coefficient_tensor() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { homlab_grid_periodic(8, 1.0, &mut g) }, HomlabStatus::Ok);
    let values = vec![2.5; 64];
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { homlab_field_from_values(values.as_ptr(), values.len(), &mut f) }, HomlabStatus::Ok);
    let mut set = ptr::null_mut();
    assert_eq!(unsafe { homlab_correctors_compute(g, f, 0.0, &mut set) }, HomlabStatus::Ok);
    let mut t = [0.0; 4];
    assert_eq!(unsafe { homlab_correctors_tensor(set, t.as_mut_ptr()) }, HomlabStatus::Ok);
    assert!((t[0] - 2.5).abs() < 1e-12 && (t[3] - 2.5).abs() < 1e-12);
    assert!(t[1].abs() < 1e-12 && t[2].abs() < 1e-12);
    unsafe {
        homlab_correctors_free(set);
        homlab_field_free(f);
        homlab_grid_free(g);
    }
}

#[test]
fn sampled_field_round_trip() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { homlab_grid_periodic(32, 8.0, &mut g) }, HomlabStatus::Ok);
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { homlab_sample_coefficient(g, 0.5, 1.0, 7, 3, &mut f) }, HomlabStatus::Ok);
    let n = unsafe { homlab_field_len(f) };
    assert_eq!(n, 1024);
    let mut buf = vec![0.0; n];
    assert_eq!(unsafe { homlab_field_copy(f, buf.as_mut_ptr(), n) }, HomlabStatus::Ok);
    assert!(buf.iter().all(|&v| (0.5..=2.0).contains(&v)));
    assert_eq!(unsafe { homlab_field_copy(f, buf.as_mut_ptr(), n - 1) }, HomlabStatus::InvalidArgument);
    unsafe {
        homlab_field_free(f);
        homlab_grid_free(g);
    }
}

#[test]
fn fit_through_the_abi() {
    let xs = [0.125, 0.0625, 0.03125, 0.015625];
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
    let (mut s, mut i, mut r2) = (0.0, 0.0, 0.0);
    let st = unsafe { homlab_fit_rate(xs.as_ptr(), ys.as_ptr(), 4, HomlabRateModel::Power, 0.0, &mut s, &mut i, &mut r2) };
    assert_eq!(st, HomlabStatus::Ok);
    assert!((s - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    let st = unsafe { homlab_fit_rate(xs.as_ptr(), ys.as_ptr(), 2, HomlabRateModel::Power, 0.0, &mut s, &mut i, &mut r2) };
    assert_eq!(st, HomlabStatus::InvalidArgument);
}

#[test]
fn experiment_status_codes() {
    let bad = CString::new("{\"experiment\": \"correctors\"}").unwrap();
    assert_eq!(unsafe { homlab_run_experiment(bad.as_ptr(), ptr::null()) }, HomlabStatus::ConfigError);

    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "experiment": "correctors",
        "grid": { "n": 16, "extent": 4.0 },
        "ensemble": { "lambda": 0.5, "corr_len": 1.0, "master_seed": 5, "n_samples": 2 },
        "outputs": dir.path().join("unused"),
    });
    let text = CString::new(cfg.to_string()).unwrap();
    let out = CString::new(dir.path().join("run").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { homlab_run_experiment(text.as_ptr(), out.as_ptr()) }, HomlabStatus::Ok);
    assert!(dir.path().join("run/result.json").exists());
    assert!(dir.path().join("run/correctors.csv").exists());
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(homlab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/homlab.h")
}

#[test]
fn header_declares_the_exports() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "homlab_last_error_message",
        "homlab_grid_periodic",
        "homlab_grid_masked",
        "homlab_sample_coefficient",
        "homlab_correctors_compute",
        "homlab_correctors_tensor",
        "homlab_fit_rate",
        "homlab_run_experiment",
        "typedef struct HomlabGrid HomlabGrid",
        "HOMLAB_STATUS_SOLVER_FAILURE = 4",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

/// Compiles and runs a C client against the static library when a C
/// compiler and the library artifact are available.
#[test]
fn c_client_links_and_runs() {
    let Ok(exe) = std::env::current_exe() else { return };
    // target/<profile>/deps/<test> -> target/<profile>
    let Some(profile_dir) = exe.parent().and_then(Path::parent) else { return };
    let lib = profile_dir.join("libhomlab_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C client: no compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "homlab.h"
int main(void) {
    HomlabGrid *g = NULL;
    if (homlab_grid_periodic(8, 1.0, &g) != HOMLAB_STATUS_OK) return 1;
    double values[64];
    for (int i = 0; i < 64; i++) values[i] = 1.5;
    HomlabField *f = NULL;
    if (homlab_field_from_values(values, 64, &f) != HOMLAB_STATUS_OK) return 2;
    HomlabCorrectors *c = NULL;
    if (homlab_correctors_compute(g, f, 0.0, &c) != HOMLAB_STATUS_OK) return 3;
    double t[4];
    homlab_correctors_tensor(c, t);
    printf("%.6f %.6f\n", t[0], t[3]);
    if (homlab_grid_periodic(0, 1.0, &g) == HOMLAB_STATUS_OK) return 4;
    char msg[256];
    homlab_last_error_message(msg, sizeof msg);
    homlab_correctors_free(c);
    homlab_field_free(f);
    return msg[0] == '\0' ? 5 : 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("client");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C client exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1.500000 1.500000");
}
