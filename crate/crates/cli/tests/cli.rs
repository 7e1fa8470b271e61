use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use viewset_core::geometry::{CameraPose, Intrinsics, Vec3};
use viewset_core::io::{self, CameraRecord};

fn viewset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewset")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, count: &str, seed: &str, size: &str) -> Output {
    viewset(&["generate", "--count", count, "--seed", seed, "--image-size", size, "--out", dir.to_str().unwrap()])
}

#[test]
fn generate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&generate(&a, "10", "7", "16")), 0);
    let first = tree(&a);
    assert_eq!(code(&generate(&a, "10", "7", "16")), 0);
    assert_eq!(first, tree(&a));
    assert_eq!(code(&generate(&b, "10", "7", "16")), 0);
    let mut other = tree(&b);
    let mut first = first;
    // the run record names its own output directory
    assert!(first.remove(Path::new("run.json")).is_some());
    other.remove(Path::new("run.json"));
    assert_eq!(first, other);
}

#[test]
fn generate_layout() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&generate(tmp.path(), "3", "1", "12")), 0);
    let manifest = json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["count"], 3);
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["train_views_per_example"], 3);
    assert_eq!(manifest["val_views_per_example"], 1);
    for name in manifest["examples"].as_array().unwrap() {
        let dir = tmp.path().join(name.as_str().unwrap());
        let cams = io::read_camera_manifest(&dir.join("cameras.jsonl")).unwrap();
        assert_eq!(cams.iter().map(|c| c.view.as_str()).collect::<Vec<_>>(), ["train_0", "train_1", "train_2", "val"]);
        let meta = json(&dir.join("metadata.json"));
        let splits: Vec<&str> = meta["views"].as_array().unwrap().iter().map(|v| v["split"].as_str().unwrap()).collect();
        assert_eq!(splits, ["train", "train", "train", "val"]);
        for v in ["train_0", "train_1", "train_2", "val"] {
            assert!(dir.join(format!("{v}.png")).is_file());
            assert!(dir.join(format!("{v}.f32img")).is_file());
        }
    }
}

#[test]
fn generate_zero_writes_manifest_only() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&generate(tmp.path(), "0", "3", "16")), 0);
    let files: Vec<_> = tree(tmp.path()).into_keys().collect();
    assert_eq!(files, [PathBuf::from("manifest.json"), PathBuf::from("run.json")]);
}

fn ring_inputs(dir: &Path, radius: f64, count: usize) -> (PathBuf, PathBuf) {
    let records: Vec<CameraRecord> = (0..count)
        .map(|i| {
            let a = i as f64 / count as f64 * std::f64::consts::TAU;
            let eye = Vec3::new(radius * a.cos(), 0.4, radius * a.sin());
            let pose = CameraPose::look_at(eye, Vec3::new(0.1, 0.2, 0.0), Vec3::y(), Intrinsics::symmetric(1.5)).unwrap();
            CameraRecord::from_pose(format!("cam{i}"), &pose)
        })
        .collect();
    let cams = dir.join("cameras.jsonl");
    io::write_camera_manifest(&cams, &records).unwrap();
    let mut pts = String::new();
    for i in 0..6 {
        for j in 0..6 {
            for k in 0..6 {
                pts.push_str(&format!("{} {} {}\n", i as f64 * 0.2 - 0.4, j as f64 * 0.16 - 0.1, k as f64 * 0.2 - 0.5));
            }
        }
    }
    let points = dir.join("points.txt");
    fs::write(&points, pts).unwrap();
    (cams, points)
}

fn normalize(cams: &Path, points: &Path, out: &Path) -> Output {
    viewset(&["normalize", "--cameras", cams.to_str().unwrap(), "--points", points.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn normalize_accepts_a_ring() {
    let tmp = tempfile::tempdir().unwrap();
    let (cams, points) = ring_inputs(tmp.path(), 2.5, 12);
    let out = tmp.path().join("out");
    let run = normalize(&cams, &points, &out);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let report = json(&out.join("report.json"));
    assert_eq!(report["verdict"]["verdict"], "accept");
    let up: Vec<f64> = report["up"]["up"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((up[1] - 1.0).abs() < 1e-9, "{up:?}");
    assert_eq!(io::read_camera_manifest(&out.join("cameras.jsonl")).unwrap().len(), 12);
}

#[test]
fn normalize_rejects_a_close_camera() {
    let tmp = tempfile::tempdir().unwrap();
    let (cams, points) = ring_inputs(tmp.path(), 2.5, 12);
    // move the last camera close to the object after normalization
    let mut records = io::read_camera_manifest(&cams).unwrap();
    let pose = CameraPose::look_at(Vec3::new(0.1, 0.35, 0.17), Vec3::new(0.1, 0.35, -0.5), Vec3::y(), Intrinsics::symmetric(1.5)).unwrap();
    *records.last_mut().unwrap() = CameraRecord::from_pose("close", &pose);
    io::write_camera_manifest(&cams, &records).unwrap();
    let run = normalize(&cams, &points, &tmp.path().join("out"));
    assert_eq!(code(&run), 4, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("too_close"));
}

#[test]
fn normalize_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (cams, points) = ring_inputs(tmp.path(), 2.5, 6);
    fs::write(&points, "").unwrap();
    let run = normalize(&cams, &points, &tmp.path().join("out"));
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("empty"));
    fs::write(&points, "0 0 0\n1 1\n").unwrap();
    let run = normalize(&cams, &points, &tmp.path().join("out"));
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("points.txt:2"), "{}", String::from_utf8_lossy(&run.stderr));
}

fn small_example(tmp: &Path) -> PathBuf {
    let data = tmp.join("data");
    assert_eq!(code(&generate(&data, "1", "11", "16")), 0);
    data.join("example_00000")
}

#[test]
fn fit_with_zero_iterations_matches_background() {
    let tmp = tempfile::tempdir().unwrap();
    let ex = small_example(tmp.path());
    let out = tmp.path().join("fit");
    let run = viewset(&["fit", "--example", ex.to_str().unwrap(), "--out", out.to_str().unwrap(), "--iterations", "0", "--grid-side", "8"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let stored = io::read_example(&ex).unwrap();
    let bg = viewset_core::imaging::Image::filled(stored.val.0.size(), stored.background_rgb());
    let bg_psnr = viewset_core::metrics::psnr(&bg, &stored.val.0).unwrap();
    let metrics = json(&out.join("metrics.json"));
    let val = metrics.as_array().unwrap().iter().find(|m| m["view"] == "val").unwrap();
    assert!((val["psnr"].as_f64().unwrap() - bg_psnr).abs() < 0.5, "{val} vs {bg_psnr}");
    assert!(out.join("grid.vxg").is_file());
}

#[test]
fn fit_config_file_sits_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let ex = small_example(tmp.path());
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"fit": {"iterations": 7, "grid_side": 6, "samples_per_ray": 8, "checkpoint_every": 2}}"#).unwrap();
    let out = tmp.path().join("fit");
    let run = viewset(&["--config", cfg.to_str().unwrap(), "fit", "--example", ex.to_str().unwrap(), "--out", out.to_str().unwrap(), "--iterations", "4"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let history = fs::read_to_string(out.join("history.txt")).unwrap();
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 5);
    assert!(out.join("checkpoints/iter_00002.vxg").is_file());
    assert!(out.join("checkpoints/iter_00004.vxg").is_file());
    let grid = io::read_grid(&out.join("grid.vxg")).unwrap();
    assert_eq!(grid.side(), 6);
    let manifest = json(&out.join("run.json"));
    assert_eq!(manifest["fit"]["iterations"], 4);
    assert_eq!(manifest["fit"]["grid_side"], 6);

    // the run record replays the run
    let again = tmp.path().join("again");
    let run = viewset(&["--config", out.join("run.json").to_str().unwrap(), "fit", "--out", again.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(fs::read(out.join("grid.vxg")).unwrap(), fs::read(again.join("grid.vxg")).unwrap());
    assert_eq!(fs::read(out.join("history.txt")).unwrap(), fs::read(again.join("history.txt")).unwrap());
}

#[test]
fn fit_lambda_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let ex = small_example(tmp.path());
    let out = tmp.path().join("fit");
    let run = viewset(&[
        "fit", "--example", ex.to_str().unwrap(), "--out", out.to_str().unwrap(), "--iterations", "10", "--grid-side", "6",
        "--samples-per-ray", "8", "--lambda", "0", "--lambda", "0.1",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let rows = json(&out.join("comparison.json"));
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert!(out.join("lambda_0/grid.vxg").is_file());
    assert!(out.join("lambda_0.1/grid.vxg").is_file());
    let m = json(&out.join("lambda_0.1/metrics.json"));
    let roles: Vec<&str> = m.as_array().unwrap().iter().map(|r| r["role"].as_str().unwrap()).collect();
    assert_eq!(roles, ["target", "target", "unseen", "held_out"]);
}

#[test]
fn sample_oracle_and_conditioning() {
    let tmp = tempfile::tempdir().unwrap();
    let ex = small_example(tmp.path());
    let out = tmp.path().join("s");
    let args = ["sample", "--example", ex.to_str().unwrap(), "--out", out.to_str().unwrap(), "--clean", "1", "--seed", "5"];
    let run = viewset(&args);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(fs::read(out.join("views/view_1.f32img")).unwrap(), fs::read(out.join("targets/view_1.f32img")).unwrap());
    for row in json(&out.join("metrics.json")).as_array().unwrap() {
        assert!(row["psnr"].as_f64().unwrap() > 50.0, "{row}");
    }
    let manifest = json(&out.join("run.json"));
    assert_eq!(manifest["sample"]["steps"], 250);
    assert_eq!(manifest["sample"]["clean"], serde_json::json!([1]));

    let out2 = tmp.path().join("s2");
    let mut args2 = args;
    args2[4] = out2.to_str().unwrap();
    assert_eq!(code(&viewset(&args2)), 0);
    for i in 0..4 {
        let f = format!("views/view_{i}.f32img");
        assert_eq!(fs::read(out.join(&f)).unwrap(), fs::read(out2.join(&f)).unwrap());
    }
}

#[test]
fn sample_needs_a_target() {
    let tmp = tempfile::tempdir().unwrap();
    let run = viewset(&["sample", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&run), 2);
    let run = viewset(&["sample", "--grid", tmp.path().join("missing.vxg").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&run), 2);
}
