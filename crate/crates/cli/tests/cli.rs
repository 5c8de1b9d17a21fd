use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dexforge_core::dataset::read_trajectory;
use dexforge_core::faas::FAAS_RECORD_BYTES;
use dexforge_core::fixtures;
use dexforge_core::kinematics::forward_kinematics;
use dexforge_core::pointcloud::{self, CameraIntrinsics, RgbdFrame};
use dexforge_core::retarget::RetargetTarget;
use dexforge_core::session::{Recording, RecordingFrame};
use dexforge_core::{JointState, Pose};
use serde_json::Value;

fn dexforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dexforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dexforge(args);
    assert!(
        out.status.success(),
        "dexforge {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Hand file plus an 8-frame recording generated from known joint angles.
fn workspace() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let hand = dir.path().join("inspire.hand.json");
    std::fs::write(&hand, fixtures::INSPIRE).unwrap();
    let model = fixtures::inspire();
    let targets: Vec<RetargetTarget> = (0..8)
        .map(|f| {
            let wrist = Pose::from_xyz_rpy([0.01 * f as f64, 0.0, 0.4], [0.0, 0.1, 0.0]);
            let active: Vec<f64> = JointState::mid_range(&model)
                .active(&model)
                .iter()
                .map(|v| v + 0.03 * (f as f64 * 0.7).sin())
                .collect();
            let q = JointState::from_active(&model, &active);
            RetargetTarget {
                fingertip_targets: forward_kinematics(&model, &q, &wrist, &Pose::identity()).fingertips,
                hand_pose: wrist,
            }
        })
        .collect();
    let rec = dir.path().join("rec.json");
    Recording::from_targets("lab", 30.0, &targets).save(&rec).unwrap();
    (dir, hand, rec)
}

fn frame(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let intr = CameraIntrinsics {
        fx: 60.0,
        fy: 60.0,
        cx: 15.5,
        cy: 11.5,
        width: 32,
        height: 24,
        depth_scale: 0.001,
    };
    let n = intr.pixel_count();
    let color = (0..n).map(|i| [(i % 251) as u8, (i / 32) as u8, 200]).collect();
    // a tilted plane with a hole in the corner
    let depth = (0..n)
        .map(|i| if i % 32 < 3 && i / 32 < 3 { 0 } else { 800 + (i % 32) as u16 * 5 })
        .collect();
    let f = RgbdFrame::new(intr, color, depth).unwrap();
    let paths = (dir.join("c.ppm"), dir.join("d.pgm"), dir.join("intr.json"));
    pointcloud::save_frame(&f, &paths.0, &paths.1, &paths.2).unwrap();
    paths
}

#[test]
fn retarget_writes_converged_frames() {
    let (dir, hand, rec) = workspace();
    let out = dir.path().join("out.json");
    let stdout = ok(&["retarget", "--hand", s(&hand), "--recording", s(&rec), "--out", s(&out)]);
    assert!(stdout.contains("8 frames, 100.0% converged"), "{stdout}");
    let doc = json(&out);
    assert_eq!(doc["frames"].as_array().unwrap().len(), 8);
    assert_eq!(doc["hand_id"], "inspire");
    assert!(doc["frames"][3]["rms"].as_f64().unwrap() < 1e-3);
    assert_eq!(doc["offset"]["xyz"], serde_json::json!([0.0, 0.0, 0.0]));
}

#[test]
fn missing_inputs_fail_with_the_path() {
    let (dir, _, rec) = workspace();
    let missing = dir.path().join("nowhere.hand.json");
    let out = dexforge(&["retarget", "--hand", s(&missing), "--recording", s(&rec), "--out", "x.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.hand.json"));
}

#[test]
fn faas_round_trip_and_transfer() {
    let (dir, hand, _) = workspace();
    let model = fixtures::inspire();
    let q = JointState::mid_range(&model);
    let state = dir.path().join("state.json");
    std::fs::write(
        &state,
        serde_json::json!({ "wrist": { "xyz": [0.1, 0.2, 0.3], "rpy": [0.0, 0.5, 0.0] }, "q": q.0 }).to_string(),
    )
    .unwrap();

    let vec_json = dir.path().join("v.json");
    let vec_bin = dir.path().join("v.bin");
    ok(&["faas", "encode", "--hand", s(&hand), "--side", "right", "--state", s(&state), "--out", s(&vec_json)]);
    ok(&["faas", "encode", "--hand", s(&hand), "--side", "right", "--state", s(&state), "--out", s(&vec_bin)]);
    assert_eq!(std::fs::metadata(&vec_bin).unwrap().len() as usize, FAAS_RECORD_BYTES);
    assert_eq!(json(&vec_json)["values"].as_array().unwrap().len(), 82);

    let back = dir.path().join("back.json");
    ok(&["faas", "decode", "--hand", s(&hand), "--side", "right", "--input", s(&vec_json), "--out", s(&back)]);
    let decoded = json(&back);
    for (a, b) in decoded["q"].as_array().unwrap().iter().zip(&q.0) {
        assert!((a.as_f64().unwrap() - b).abs() < 1e-12);
    }
    // the binary record is f32, so it decodes to within single precision
    ok(&["faas", "decode", "--hand", s(&hand), "--side", "right", "--input", s(&vec_bin), "--out", s(&back)]);
    for (a, b) in json(&back)["q"].as_array().unwrap().iter().zip(&q.0) {
        assert!((a.as_f64().unwrap() - b).abs() < 1e-6);
    }

    let wuji = dir.path().join("wuji.hand.json");
    std::fs::write(&wuji, fixtures::WUJI).unwrap();
    let moved = dir.path().join("moved.json");
    ok(&[
        "faas", "transfer", "--from", s(&hand), "--to", s(&wuji), "--side", "right", "--state", s(&state), "--out",
        s(&moved),
    ]);
    assert_eq!(json(&moved)["q"].as_array().unwrap().len(), fixtures::wuji().full_dof);
}

#[test]
fn train_toy_reports_and_saves() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("toy.ckpt");
    let csv = dir.path().join("loss.csv");
    let stdout = ok(&[
        "train-toy", "--epochs", "3", "--samples", "64", "--hidden", "16", "--out", s(&ckpt), "--loss-csv", s(&csv),
    ]);
    assert!(stdout.contains("validation loss"), "{stdout}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 4);
    let (net, header) = dexforge_core::flowmatch::load_checkpoint(&ckpt).unwrap();
    assert_eq!(header.obs_dim, 2);
    assert_eq!(dexforge_core::flowmatch::VectorField::action_dim(&net), 36);
}

#[test]
fn pointcloud_unproject_reproject_attach() {
    let (dir, hand, _) = workspace();
    let (c, d, i) = frame(dir.path());
    let cloud = dir.path().join("scene.bin");
    let ply = dir.path().join("scene.ply");
    let stdout = ok(&[
        "pointcloud", "unproject", "--color", s(&c), "--depth", s(&d), "--intrinsics", s(&i), "--out", s(&cloud),
        "--ply", s(&ply),
    ]);
    assert!(stdout.starts_with(&format!("{} points", 32 * 24 - 9)), "{stdout}");
    assert!(std::fs::read_to_string(&ply).unwrap().starts_with("ply"));

    let (c2, d2, i2) = (dir.path().join("c2.ppm"), dir.path().join("d2.pgm"), dir.path().join("i2.json"));
    std::fs::copy(&i, &i2).unwrap();
    ok(&["pointcloud", "reproject", "--cloud", s(&cloud), "--intrinsics", s(&i2), "--color", s(&c2), "--depth", s(&d2)]);
    let a = pointcloud::load_frame(&c, &d, &i).unwrap();
    let b = pointcloud::load_frame(&c2, &d2, &i2).unwrap();
    assert_eq!(a.depth, b.depth);
    // holes carry no point, so their color does not come back
    for k in 0..a.depth.len() {
        let want = if a.depth[k] == 0 { [0, 0, 0] } else { a.color[k] };
        assert_eq!(b.color[k], want, "pixel {k}");
    }

    let model = fixtures::inspire();
    let state = dir.path().join("state.json");
    std::fs::write(
        &state,
        serde_json::json!({ "wrist": { "xyz": [0.0, 0.0, 0.5] }, "q": JointState::mid_range(&model).0 }).to_string(),
    )
    .unwrap();
    let merged = dir.path().join("merged.bin");
    ok(&[
        "pointcloud", "attach", "--scene", s(&cloud), "--hand", s(&hand), "--state", s(&state), "--hand-points",
        "300", "--out", s(&merged),
    ]);
    assert_eq!(pointcloud::load_cloud(&merged).unwrap().len(), 32 * 24 - 9 + 300);
}

#[test]
fn dataset_pack_stats_and_mix() {
    let (dir, hand, rec) = workspace();
    // give every other frame a scene cloud
    let (c, d, i) = frame(dir.path());
    ok(&["pointcloud", "unproject", "--color", s(&c), "--depth", s(&d), "--intrinsics", s(&i), "--out", s(&dir.path().join("scene.bin"))]);
    let mut r = Recording::load(&rec).unwrap();
    for (t, f) in r.frames.iter_mut().enumerate() {
        let RecordingFrame { scene, .. } = f;
        *scene = (t % 2 == 0).then(|| "scene.bin".to_string());
    }
    r.save(&rec).unwrap();

    let shard = dir.path().join("shard");
    let stdout = ok(&[
        "dataset", "pack", "--hand", s(&hand), "--recording", s(&rec), "--instruction", "pick up the cup", "--out",
        s(&shard),
    ]);
    let stats: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(stats["frames"], 8);
    assert_eq!(stats["unique_clouds"], 2);
    let traj = read_trajectory(&shard).unwrap();
    assert_eq!(traj.frames[0].instruction, "pick up the cup");
    assert_eq!(traj.actions[7], traj.frames[7].proprio);

    let report: Value = serde_json::from_str(&ok(&["dataset", "stats", s(&shard)])).unwrap();
    assert_eq!(report["kept"].as_array().unwrap().len(), 1);
    let report: Value = serde_json::from_str(&ok(&["dataset", "stats", s(&shard), "--min-frames", "9"])).unwrap();
    assert_eq!(report["dropped"][0]["reasons"][0], "length 8 < 9");

    let mix = ok(&["dataset", "mix-preview", "--human", "30", "--robot", "10", "--batch-size", "8", "--batches", "5"]);
    assert_eq!(mix.lines().count(), 6);
    assert!(mix.contains("expected 0.750"), "{mix}");
    assert!(!dexforge(&["dataset", "mix-preview", "--human", "0", "--robot", "0"]).status.success());
}
