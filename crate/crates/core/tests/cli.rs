use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use threadtrace::io::GroundTruthFile;

fn threadtrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_threadtrace")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = threadtrace(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            for (name, bytes) in tree(&path) {
                out.push((format!("{}/{name}", path.file_name().unwrap().to_string_lossy()), bytes));
            }
        } else {
            out.push((path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen", "--out", s(dir), "--count", "2", "--seed", "7", "--occluders", "1", "--salt", "0.01"]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 1 + 2 * 6);
    assert_eq!(ta, tb);
    let m = read_json(&a.join("manifest.json"));
    assert_eq!(m["scenes"][1]["seed"], 8);
    assert_eq!(m["scenes"][0]["input_gradient"], "scene_0000/input_gradient.png");
}

#[test]
fn reconstruct_writes_spline_and_overlay_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--out", s(&data), "--seed", "3"]);
    let g = data.join("scene_0000/gradient.png");
    let c = data.join("scene_0000/conjugate.png");
    let mut outputs = Vec::new();
    for run in 0..2 {
        let json = tmp.path().join(format!("r{run}.json"));
        let png = tmp.path().join(format!("r{run}.png"));
        ok(&["reconstruct", "--gradient", s(&g), "--conjugate", s(&c), "--out", s(&json), "--overlay", s(&png), "--n-samples", "50"]);
        outputs.push((std::fs::read(&json).unwrap(), std::fs::read(&png).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let v: Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(v["sampled"]["points"].as_array().unwrap().len(), 50);
    assert!(v["spline"]["knots"].is_array());
    assert_eq!(&outputs[0].1[1..4], b"PNG");
}

#[test]
fn eval_of_ground_truth_predictions_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let preds = tmp.path().join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    ok(&["gen", "--out", s(&data), "--count", "2", "--seed", "11"]);
    for id in ["scene_0000", "scene_0001"] {
        let gt = GroundTruthFile::from_json(&std::fs::read(data.join(id).join("ground_truth.json")).unwrap()).unwrap();
        let points: Vec<[f64; 2]> = gt.centerline.iter().map(|c| [c[0], c[1]]).collect();
        let body = serde_json::json!({ "sampled": { "points": points } });
        std::fs::write(preds.join(format!("{id}.json")), body.to_string()).unwrap();
    }
    let report = tmp.path().join("report.json");
    ok(&["eval", "--manifest", s(&data.join("manifest.json")), "--predictions", s(&preds), "--out", s(&report)]);
    let v = read_json(&report);
    assert_eq!(v["summary"]["frames"], 2);
    assert_eq!(v["summary"]["mean_overall"], 0.0);
    assert_eq!(v["summary"]["mean_needle_end"], 0.0);
    assert_eq!(v["frames"][0]["psnr_db"], Value::Null);
}

#[test]
fn eval_reconstructs_manifest_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--out", s(&data), "--count", "2", "--seed", "21"]);
    let out = ok(&["eval", "--manifest", s(&data.join("manifest.json"))]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["summary"]["detected"], 2);
    assert_eq!(v["summary"]["mean_psnr_db"], "inf");
    assert!(v["summary"]["mean_overall"].as_f64().unwrap() < 2.0);
}

#[test]
fn bench_reports_timings() {
    let out = ok(&["bench", "--runs", "3", "--warmup", "0", "--seed", "2"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["runs"], 3);
    assert_eq!(v["width"], 512);
    assert!(v["median_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn thread_count_comes_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_threadtrace"))
        .args(["bench", "--runs", "1", "--warmup", "0"])
        .env("THREADTRACE_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["threads"], 2);
    let bad = Command::new(env!("CARGO_BIN_EXE_threadtrace"))
        .args(["bench", "--runs", "1"])
        .env("THREADTRACE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn input_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(threadtrace(&["reconstruct", "--gradient", "missing.png", "--out", "x.json"]).status.code(), Some(1));
    assert_eq!(threadtrace(&["reconstruct", "--unknown-flag"]).status.code(), Some(1));
    assert_eq!(threadtrace(&["gen", "--out", s(tmp.path()), "--salt", "2"]).status.code(), Some(1));
    let not_png = tmp.path().join("g.png");
    std::fs::write(&not_png, b"definitely not a png").unwrap();
    let out = threadtrace(&["reconstruct", "--gradient", s(&not_png), "--out", s(&tmp.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, br#"{"t_q": 1}"#).unwrap();
    assert_eq!(threadtrace(&["bench", "--config", s(&cfg)]).status.code(), Some(1));
    assert_eq!(threadtrace(&["--help"]).status.code(), Some(0));
}
