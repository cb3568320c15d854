use std::fs;
use std::path::Path;
use std::process::Command;

use amodal_vis::metrics::EvalReport;
use amodal_vis::pipeline::{read_tracks, Checkpoint};

fn run(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_amodal-vis")).args(args).env("RUST_LOG", "warn").output().expect("binary runs");
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn generate_train_infer_eval_render() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();

    write(
        &root.join("gen.json"),
        r#"{"scene": {"n_frames": 4, "height": 16, "width": 16, "min_size": 3.0, "max_size": 5.0}, "train_videos": 3, "test_videos": 2, "seed": 4}"#,
    );
    run(&["generate", "--config", &s(&root.join("gen.json")), "--out", &s(&root.join("data"))]);
    assert!(root.join("data/train/video_00002/manifest.json").exists());
    assert!(root.join("data/test/video_00001/manifest.json").exists());

    let train_dir = s(&root.join("data/train"));
    write(
        &root.join("run.json"),
        &format!(
            r#"{{"height": 16, "width": 16, "clip_len": 2, "proto": {{"n_protos": 6, "embed_dim": 8}},
                "train": {{"epochs": 1, "max_steps": 3, "checkpoint_every": 2}}, "infer": {{"score_threshold": 0.0}},
                "data": {{"train_dir": "{train_dir}"}}}}"#
        ),
    );
    run(&["train", "--config", &s(&root.join("run.json")), "--out", &s(&root.join("ckpt"))]);
    let ckpt_path = root.join("ckpt/checkpoint.json");
    assert_eq!(Checkpoint::load(&ckpt_path).unwrap().step, 3);
    assert!(root.join("ckpt/checkpoint_000002.json").exists());

    run(&["infer", "--checkpoint", &s(&ckpt_path), "--video", &s(&root.join("data/test")), "--out", &s(&root.join("pred"))]);
    let set = read_tracks(&root.join("pred/video_00000")).unwrap();
    assert_eq!(set.tracks.len(), 6);

    let table = run(&[
        "eval",
        "--pred",
        &s(&root.join("pred")),
        "--gt",
        &s(&root.join("data/test")),
        "--metrics",
        &s(&root.join("metrics.json")),
    ]);
    assert!(table.contains("visible") && table.contains("amodal"));
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(root.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report.videos, 2);
    assert!((0.0..=1.0).contains(&report.amodal.ap));

    // single-video inference and evaluation
    let one = s(&root.join("data/test/video_00001"));
    run(&["infer", "--checkpoint", &s(&ckpt_path), "--video", &one, "--out", &s(&root.join("pred_one"))]);
    run(&["eval", "--pred", &s(&root.join("pred_one")), "--gt", &one, "--metrics", &s(&root.join("one.json"))]);

    run(&["render", "--pred", &s(&root.join("pred_one")), "--video", &one, "--out", &s(&root.join("frames"))]);
    assert!(root.join("frames/frame_0003.png").exists());
}

#[test]
fn errors_are_reported_with_failure_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"clip_len": 3, "unknown_key": 1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_amodal-vis"))
        .args(["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));

    let missing = Command::new(env!("CARGO_BIN_EXE_amodal-vis"))
        .args(["infer", "--checkpoint", "/nonexistent/ckpt.json", "--video", "/nonexistent", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
}
