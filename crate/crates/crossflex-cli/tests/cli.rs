//! End-to-end tests of the crossflex binary: every exit code, determinism of
//! the outputs, and the shape of the exported files.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crossflex"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_owned()
}

#[test]
fn witness_construct_verify_round_trip_passes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let report = dir.path().join("report.json");

    let out = run(&[
        "witness",
        "rational",
        "spherical",
        "1,1,1",
        "0.2",
        "--out",
        &path_str(&spec),
    ]);
    assert!(out.status.success(), "witness failed: {}", stderr(&out));

    let out = run(&["construct", &path_str(&spec)]);
    assert!(out.status.success(), "construct failed: {}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["space"], "spherical");
    assert_eq!(parsed["classification"]["verdict"], "spherical");

    let out = run(&[
        "verify",
        &path_str(&spec),
        "--samples",
        "60",
        "--seed",
        "1",
        "--out",
        &path_str(&report),
    ]);
    assert!(out.status.success(), "verify failed: {}", stderr(&out));
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for (name, check) in parsed.as_object().unwrap() {
        if let Some(pass) = check.get("pass") {
            assert_eq!(pass, true, "check {name} failed in report");
        }
    }
}

#[test]
fn construct_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    run(&[
        "witness",
        "simplest",
        "spherical",
        "3",
        "0.2",
        "--out",
        &path_str(&spec),
    ]);
    let first = run(&["construct", &path_str(&spec)]);
    let second = run(&["construct", &path_str(&spec)]);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn malformed_json_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    fs::write(&spec, "{\"space\": \"spherical\",").unwrap();
    let out = run(&["construct", &path_str(&spec)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("line"),
        "stderr lacks a parse location: {}",
        stderr(&out)
    );
}

#[test]
fn unrealisable_requests_exit_3() {
    let out = run(&["witness", "exotic", "euclidean", "1,1,1", "0.01"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));

    // A spherical-only shape pair relabelled as euclidean must be refused.
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    run(&[
        "witness",
        "exotic",
        "spherical",
        "1,1,1",
        "0.01",
        "--out",
        &path_str(&spec),
    ]);
    let doctored = fs::read_to_string(&spec)
        .unwrap()
        .replace("\"spherical\"", "\"euclidean\"");
    fs::write(&spec, doctored).unwrap();
    let out = run(&["construct", &path_str(&spec)]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn obj_export_refuses_non_euclidean_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    run(&[
        "witness",
        "simplest",
        "spherical",
        "3",
        "0.2",
        "--out",
        &path_str(&spec),
    ]);
    let out = run(&[
        "flex",
        &path_str(&spec),
        "--samples",
        "3",
        "--obj-dir",
        &path_str(&dir.path().join("objs")),
    ]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
}

#[test]
fn obj_export_writes_one_octahedron_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let frames = dir.path().join("frames.json");
    let objs = dir.path().join("objs");
    run(&[
        "witness",
        "simplest",
        "euclidean",
        "3",
        "0.2",
        "--out",
        &path_str(&spec),
    ]);
    let out = run(&[
        "flex",
        &path_str(&spec),
        "--samples",
        "3",
        "--obj-dir",
        &path_str(&objs),
        "--out",
        &path_str(&frames),
    ]);
    assert!(out.status.success(), "flex failed: {}", stderr(&out));

    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&frames).unwrap()).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 3);

    let mut files: Vec<_> = fs::read_dir(&objs)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["frame_0000.obj", "frame_0001.obj", "frame_0002.obj"]);
    for name in files {
        let text = fs::read_to_string(objs.join(name)).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 6);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 8);
    }
}

#[test]
fn impossible_tolerance_exits_1_but_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let report = dir.path().join("report.json");
    run(&[
        "witness",
        "simplest",
        "spherical",
        "3",
        "0.2",
        "--out",
        &path_str(&spec),
    ]);
    let out = run(&[
        "verify",
        &path_str(&spec),
        "--samples",
        "40",
        "--seed",
        "1",
        "--tol",
        "1e-30",
        "--out",
        &path_str(&report),
    ]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    assert!(report.exists(), "report must be written even on failure");
    assert!(
        stderr(&out).contains("drift") || stderr(&out).contains("residual"),
        "stderr should name a failing check: {}",
        stderr(&out)
    );
}

#[test]
fn classify_names_the_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let gh = dir.path().join("gh.json");
    fs::write(
        &gh,
        r#"{"n":3,
            "G":[[1,0,0],[0,1,0],[0,0,1]],
            "H":[[1,0,0],[0,1,0],[0,0,1]]}"#,
    )
    .unwrap();
    let out = run(&["classify", &path_str(&gh)]);
    assert!(out.status.success(), "classify failed: {}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("spherical"));
}

#[test]
fn coeffs_then_fit_recovers_the_modulus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let curve = dir.path().join("curve.json");
    let cc = dir.path().join("coeffs.json");
    run(&[
        "witness",
        "elliptic1",
        "spherical",
        "1,1,1",
        "0.2",
        "--out",
        &path_str(&spec),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&spec).unwrap()).unwrap();
    let k_curve = parsed["curve"]["k"].as_f64().unwrap();
    fs::write(&curve, serde_json::to_string(&parsed["curve"]).unwrap()).unwrap();

    let out = run(&["coeffs", &path_str(&curve), "--out", &path_str(&cc)]);
    assert!(out.status.success(), "coeffs failed: {}", stderr(&out));
    let out = run(&["fit", &path_str(&cc)]);
    assert!(out.status.success(), "fit failed: {}", stderr(&out));
    let fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let k_fit = fit["k"].as_f64().unwrap();
    assert!(
        (k_fit - k_curve).abs() < 1e-8,
        "k_fit {k_fit} vs k_curve {k_curve}"
    );
}

#[test]
fn flex_sample_count_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    run(&[
        "witness",
        "rational",
        "spherical",
        "1,1,1",
        "0.2",
        "--out",
        &path_str(&spec),
    ]);
    let out = run(&["flex", &path_str(&spec), "--samples", "2"]);
    assert!(out.status.success(), "flex failed: {}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 2);
}

#[test]
fn seeded_flex_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    run(&[
        "witness",
        "rational",
        "spherical",
        "2,1",
        "0.2",
        "--out",
        &path_str(&spec),
    ]);
    let args = ["flex", &path_str(&spec), "--samples", "50", "--seed", "7"];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success(), "flex failed: {}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);
}
