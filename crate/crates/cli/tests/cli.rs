use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use mousemap::config::KEYS;
use mousemap::embed::umap::read_model;
use mousemap::explore::{query_region, Region};

fn mousemap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mousemap")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mousemap(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn every_config_key_has_a_flag() {
    let help = ok(&["report", "--help"]);
    for key in KEYS {
        assert!(help.contains(&format!("--{key}")), "--{key} missing from help");
    }
}

#[test]
fn synth_profiles_write_truth() {
    let dir = tempfile::tempdir().unwrap();
    for profile in ["blobs", "rings", "spike-track", "crossing-boxes"] {
        let out = dir.path().join(profile);
        ok(&["synth", profile, "--out", s(&out), "--seed", "3"]);
        assert!(out.join("truth.json").is_file(), "{profile}");
    }
    let truth: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spike-track/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["spike_frames"].as_array().unwrap().len(), 20);
    assert!(dir.path().join("crossing-boxes/detections/crossing.jsonl").is_file());

    let bad = mousemap(&["synth", "walking", "--out", s(&dir.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn validation_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = mousemap(&["report", "--pose", s(dir.path()), "--out", s(&out), "--geomean-threshold", "1.01"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("geomean"));
    assert!(!out.exists());

    let config = dir.path().join("run.conf");
    std::fs::write(&config, "omega = 0\n").unwrap();
    let r = mousemap(&["report", "--config", s(&config), "--pose", s(dir.path()), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    // A flag does not mask an unparseable entry in the file.
    std::fs::write(&config, "omega = zero\n").unwrap();
    let r = mousemap(&["report", "--config", s(&config), "--omega", "30"]);
    assert_eq!(r.status.code(), Some(2), "unparseable file values are still rejected");

    let r = mousemap(&["report", "--pose", s(&dir.path().join("missing")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    let r = mousemap(&["query", "--model", s(dir.path()), "--region", "rect:1,0,0,1"]);
    assert_eq!(r.status.code(), Some(2));
}

/// Running the stages one at a time reproduces the orchestrated run byte for
/// byte, and the query and ensemble commands work on its artifacts.
#[test]
fn stages_compose_to_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    ok(&["synth", "behavior-modes", "--out", s(&corpus), "--videos", "2", "--frames", "400", "--render-frames"]);
    let config = root.join("run.conf");
    std::fs::write(
        &config,
        format!(
            "# small run\ndetections = {}\npose = {}\nneighbors = 30\nepochs = 200\nseed = 5\nomega = 40\n",
            s(&corpus.join("detections")),
            s(&corpus.join("pose"))
        ),
    )
    .unwrap();
    let full = root.join("full");
    let report: Value = serde_json::from_str(&ok(&["report", "--config", s(&config), "--out", s(&full), "--omega", "30"])).unwrap();
    assert_eq!(report["params"]["omega"], 30);
    assert_eq!(report["params"]["neighbors"], 30);
    assert_eq!(report["params"]["min-dist"], 0.0);
    assert_eq!(report["counts"]["quality"]["selected"], 2);
    assert_eq!(report["counts"]["windows"]["windows"], 2 * (400 - 30 + 1));
    assert!(full.join("timings.json").is_file());

    let manual = root.join("manual");
    let m = |p: &str| manual.join(p);
    let c = ["--config", s(&config), "--omega", "30"];
    let run = |args: &[&str]| ok(&[args, &c[..]].concat());
    run(&["spotlight", "--detections", s(&corpus.join("detections")), "--out", s(&m("spotlight"))]);
    run(&[
        "quality",
        "--pose",
        s(&corpus.join("pose")),
        "--segments",
        s(&m("spotlight/segments.jsonl")),
        "--out",
        s(&m("quality")),
    ]);
    run(&["smooth", "--pose", s(&corpus.join("pose")), "--selected", s(&m("quality/selected.txt")), "--out", s(&m("series"))]);
    run(&["windows", "--series", s(&m("series")), "--out", s(&m("windows"))]);
    run(&["umap", "--windows", s(&m("windows")), "--out", s(&m("embedding"))]);

    let mut stage_files = files_under(&full);
    stage_files.retain(|p| p != Path::new("report.json") && p != Path::new("timings.json"));
    assert_eq!(stage_files, files_under(&manual));
    for rel in &stage_files {
        assert!(std::fs::read(full.join(rel)).unwrap() == std::fs::read(manual.join(rel)).unwrap(), "{} differs", rel.display());
    }

    // CLI query output equals the library query on the loaded model.
    let model = read_model(&full.join("embedding"), false).unwrap();
    let (xs, ys): (Vec<f32>, Vec<f32>) = model.coords.rows().into_iter().map(|r| (r[0], r[1])).unzip();
    let lo = |v: &[f32]| v.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = |v: &[f32]| v.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let (x0, x1, y0, y1) = (lo(&xs), hi(&xs), lo(&ys), hi(&ys));
    for i in 0..5 {
        let f = i as f64 / 5.0;
        for spec in [
            format!("rect:{},{},{},{}", x0 + f * (x1 - x0) * 0.5, x1 - f * (x1 - x0) * 0.3, y0, y0 + (1.0 - f) * (y1 - y0)),
            format!("disc:{},{},{}", x0 + f * (x1 - x0), (y0 + y1) / 2.0, (x1 - x0) / 4.0),
        ] {
            let got: Value = serde_json::from_str(&ok(&["query", "--model", s(&full.join("embedding")), "--region", &spec])).unwrap();
            let region: Region = spec.parse().unwrap();
            let want = serde_json::to_value(query_region(&model.coords, &model.index, &region)).unwrap();
            assert_eq!(got, want, "{spec}");
        }
    }

    // Ensemble over a region holding every window.
    let clip_dir = root.join("clip");
    let all = format!("rect:{},{},{},{}", x0 - 1.0, x1 + 1.0, y0 - 1.0, y1 + 1.0);
    let summary: Value = serde_json::from_str(&ok(&[
        "ensemble",
        "--model",
        s(&full.join("embedding")),
        "--region",
        &all,
        "--frames",
        s(&corpus.join("frames")),
        "--out",
        s(&clip_dir),
    ]))
    .unwrap();
    assert_eq!(summary["frames"], 30);
    assert_eq!(summary["windows"], 2 * 371);
    assert!(clip_dir.join("clip.json").is_file());
    assert_eq!(files_under(&clip_dir).iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count(), 30);

    // PCA and a two-run sweep on the same windows.
    let pca: Value = serde_json::from_str(&ok(&["pca", "--windows", s(&full.join("windows")), "--out", s(&root.join("pca"))])).unwrap();
    assert_eq!(pca["points"], 742);
    let q: Value =
        serde_json::from_str(&ok(&["query", "--model", s(&root.join("pca")), "--region", "disc:0,0,1000000"])).unwrap();
    assert_eq!(q["ids"].as_array().unwrap().len(), 742);
    let runs: Value = serde_json::from_str(&ok(&[
        "sweep",
        "--windows",
        s(&full.join("windows")),
        "--out",
        s(&root.join("sweep")),
        "--neighbors",
        "10,30",
        "--min-dist",
        "0",
        "--epochs",
        "100",
    ]))
    .unwrap();
    assert_eq!(runs.as_array().unwrap().len(), 2);
    assert!(root.join("sweep/sweep.csv").is_file());
}
