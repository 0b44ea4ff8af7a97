use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SCENE: &str = "\
seed = 5
plane.0.corners = -2 0 -1   2 0 -1   2 0 3   -2 0 3
plane.0.albedo = checker
plane.0.color = 0.7 0.6 0.5
plane.0.color2 = 0.1 0.1 0.15
plane.0.cell = 0.2
plane.0.roughness = 0.1
plane.1.corners = -2 0 2   2 0 2   2 2 2   -2 2 2
plane.1.albedo = noise
plane.1.cell = 0.06
plane.1.roughness = 0.5
light.ambient = 0.2 0.2 0.2
light.lobe.0.axis = 0 1 0.3
light.lobe.0.sharpness = 30
light.lobe.0.amplitude = 6 6 6
render.spp = 16
render.env_spp = 4
render.env_height = 8
";

const TRAJ: &str = "\
frames = 4
fps = 30
orbit.center = 0 0.3 1.2
orbit.radius = 1.2
orbit.height = 0.6
orbit.start = 175
orbit.arc = 10
camera.width = 48
camera.height = 36
camera.hfov = 60
controls.k = 4
";

fn pbba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbba"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| {
            l.split_once(" = ")
                .filter(|(k, _)| *k == key)
                .map(|(_, v)| v.to_string())
        })
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the specs and generates a dataset under a fresh directory.
fn dataset() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let (scene, traj, out) = (
        dir.path().join("a.scene"),
        dir.path().join("a.traj"),
        dir.path().join("data"),
    );
    fs::write(&scene, SCENE).unwrap();
    fs::write(&traj, TRAJ).unwrap();
    let o = pbba(&[
        "scenegen",
        "--scene",
        path(&scene),
        "--traj",
        path(&traj),
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(value(&stdout(&o), "frames"), "4");
    (dir, out)
}

fn assert_one_line_error(o: &Output, kind: &str) {
    assert!(!o.status.success());
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error: {kind}: ")), "{err}");
}

#[test]
fn generated_dataset_validates() {
    let (_dir, data) = dataset();
    let o = pbba(&["validate", "--dataset", path(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(value(&stdout(&o), "valid"), "true");
}

#[test]
fn broken_dataset_fails_validation() {
    let (_dir, data) = dataset();
    fs::write(data.join("frames/000001.depth.pfm"), b"Pf\n48 36\n-1\n").unwrap();
    let o = pbba(&["validate", "--dataset", path(&data)]);
    assert_one_line_error(&o, "invalid");
    assert!(stdout(&o).contains("000001.depth.pfm"));
}

#[test]
fn deterministic_solves_are_bit_identical() {
    let (dir, data) = dataset();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = pbba(&[
            "solve",
            "--dataset",
            path(&data),
            "--out",
            path(&out),
            "--deterministic",
            "--weights",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["refined.txt", "report.txt", "weights_000000.pfm", "weights_000003.pfm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = fs::read_to_string(a.join("report.txt")).unwrap();
    assert_eq!(value(&report, "weight_mode"), "pb");
    assert_eq!(value(&report, "frames"), "4");
}

#[test]
fn config_file_and_flags_combine() {
    let (dir, data) = dataset();
    let cfg = dir.path().join("solve.cfg");
    fs::write(&cfg, "weight_mode = tdist\nlm.max_outer = 3\n").unwrap();
    let out = dir.path().join("out");
    let o = pbba(&[
        "solve",
        "--dataset",
        path(&data),
        "--config",
        path(&cfg),
        "--out",
        path(&out),
        "--weight-mode",
        "uniform",
        "--lm.max_outer",
        "1",
        "--points.per_host",
        "100",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(value(&report, "weight_mode"), "uniform");
    assert_eq!(value(&report, "outer_iterations"), "1");
}

#[test]
fn bad_configuration_is_a_config_error() {
    let (dir, data) = dataset();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "thetta = 3\n").unwrap();
    let out = dir.path().join("out");
    assert_one_line_error(
        &pbba(&[
            "solve",
            "--dataset",
            path(&data),
            "--config",
            path(&cfg),
            "--out",
            path(&out),
        ]),
        "config",
    );
    assert_one_line_error(
        &pbba(&["solve", "--dataset", path(&data), "--out", path(&out), "--theta", "-1"]),
        "config",
    );
}

#[test]
fn evaluate_reports_zero_for_identical_trajectories() {
    let (dir, data) = dataset();
    let gt = data.join("groundtruth.txt");
    let dump = dir.path().join("xyz.txt");
    let o = pbba(&[
        "evaluate",
        "--est",
        path(&gt),
        "--gt",
        path(&gt),
        "--dump-xyz",
        path(&dump),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(value(&text, "ate_rmse").parse::<f64>().unwrap() < 1e-12);
    assert_eq!(value(&text, "pairs"), "4");
    let rows = fs::read_to_string(&dump).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert!(rows.lines().skip(1).all(|l| l.split_whitespace().count() == 8));

    let o = pbba(&["evaluate", "--est", path(&data.join("initial.txt")), "--gt", path(&gt)]);
    assert!(value(&stdout(&o), "ate_rmse").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn radiance_check_prints_statistics() {
    let (_dir, data) = dataset();
    let o = pbba(&[
        "radiance-check",
        "--dataset",
        path(&data),
        "--samples",
        "256",
        "--draws",
        "20",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(value(&text, "draws"), "20");
    let median: f64 = value(&text, "median_rel_error").parse().unwrap();
    assert!(median.is_finite() && median >= 0.0);
}

#[test]
fn missing_inputs_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    assert_one_line_error(&pbba(&["validate", "--dataset", path(&nowhere)]), "invalid");
    assert_one_line_error(
        &pbba(&[
            "solve",
            "--dataset",
            path(&nowhere),
            "--out",
            path(&dir.path().join("o")),
        ]),
        "dataset",
    );
    assert_one_line_error(
        &pbba(&["evaluate", "--est", path(&nowhere), "--gt", path(&nowhere)]),
        "trajectory",
    );
    let scene = dir.path().join("bad.scene");
    fs::write(&scene, "plane.0.albedo = checker\n").unwrap();
    let traj = dir.path().join("a.traj");
    fs::write(&traj, TRAJ).unwrap();
    assert_one_line_error(
        &pbba(&[
            "scenegen",
            "--scene",
            path(&scene),
            "--traj",
            path(&traj),
            "--out",
            path(&nowhere),
        ]),
        "scene",
    );
}

#[test]
fn usage_errors_are_one_line() {
    assert_one_line_error(&pbba(&["solve", "--dataset"]), "usage");
    assert_one_line_error(&pbba(&["frobnicate"]), "usage");
    let o = pbba(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("scenegen"));
}
