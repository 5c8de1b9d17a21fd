mod common;

use common::{fk_target, random_q, tiny_cloud};
use dexforge_core::fixtures;
use dexforge_core::pointcloud::save_cloud;
use dexforge_core::retarget::{CalibrationProfile, IkConfig, RetargetTarget};
use dexforge_core::session::*;
use dexforge_core::{HandModel, JointState, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// FK-oracle recording: smooth joint motion at a fixed hand pose, targets generated
/// with the given offset.
fn oracle_targets(model: &HandModel, frames: usize, offset: &Offset, seed: u64) -> Vec<RetargetTarget> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = random_q(model, &mut rng);
    let q1 = random_q(model, &mut rng);
    let hand = Pose::from_xyz_rpy([0.1, -0.05, 0.4], [0.3, -0.2, 0.8]);
    let active = model.active_joints();
    (0..frames)
        .map(|f| {
            let s = f as f64 / frames.max(2) as f64 * 0.2;
            let a: Vec<f64> = active.iter().map(|&j| (1.0 - s) * q0[j] + s * q1[j]).collect();
            fk_target(model, &JointState::from_active(model, &a), hand, &offset_pose(offset))
        })
        .collect()
}

fn session(model: &HandModel, targets: &[RetargetTarget], offset: Option<Offset>) -> Session {
    let rec = Recording::from_targets("synthetic", 30.0, targets);
    let n = rec.frames.len();
    Session::new("s1", model.clone(), rec, vec![None; n], offset, IkConfig::interactive()).unwrap()
}

#[test]
fn identity_start_and_identity_profile() {
    let model = fixtures::twig();
    let mut s = session(&model, &oracle_targets(&model, 4, &[0.0; 6], 1), None);
    assert_eq!(s.offset(), [0.0; 6]);
    assert!(!s.is_dirty());
    let dir = tempfile::tempdir().unwrap();
    let (profile, path) = s.save_profile(dir.path()).unwrap();
    assert_eq!(profile.offset, Pose::identity());
    assert_eq!(path.file_name().unwrap(), "synthetic__twig.profile.json");
    assert_eq!(CalibrationProfile::load(&path).unwrap(), profile);
}

#[test]
fn open_from_files_and_missing_hand() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixtures::inspire();
    let hand_path = dir.path().join("inspire.hand.json");
    std::fs::write(&hand_path, fixtures::INSPIRE).unwrap();
    let mut rec = Recording::from_targets("capture", 30.0, &oracle_targets(&model, 3, &[0.0; 6], 2));
    std::fs::create_dir(dir.path().join("scene")).unwrap();
    save_cloud(&tiny_cloud(5, 500), dir.path().join("scene/000.bin")).unwrap();
    rec.frames[0].scene = Some("scene/000.bin".into());
    let rec_path = dir.path().join("rec.json");
    rec.save(&rec_path).unwrap();

    let mut s = Session::open("a", &rec_path, &hand_path, None, IkConfig::interactive()).unwrap();
    s.set_caps(RenderCaps {
        scene_points: 100,
        hand_points: 300,
        hand_density: 2e5,
    });
    let v = s.render_state().unwrap();
    assert_eq!(v.scene.count, 100);
    assert!(v.hand.count <= 300 && v.hand.count > 0);
    assert_eq!(v.scene.decode().unwrap().len(), 100);
    assert_eq!(v.residual, s.last().residual);
    assert_eq!(v.fingertip_names.len(), 5);

    let missing = dir.path().join("nope.hand.json");
    let err = Session::open("b", &rec_path, &missing, None, IkConfig::interactive()).unwrap_err();
    assert!(matches!(err, SessionError::Hand(_)), "{err}");

    // fingertip count mismatch names the element
    let twig_path = dir.path().join("twig.hand.json");
    std::fs::write(&twig_path, fixtures::TWIG).unwrap();
    let err = Session::open("c", &rec_path, &twig_path, None, IkConfig::interactive()).unwrap_err();
    assert!(err.to_string().contains("frames[0].fingertips"), "{err}");
}

#[test]
fn reopening_with_saved_profile_reproduces_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixtures::inspire();
    let hand_path = dir.path().join("inspire.hand.json");
    std::fs::write(&hand_path, fixtures::INSPIRE).unwrap();
    let offset = [0.004, -0.003, 0.002, 0.03, -0.02, 0.01];
    let rec = Recording::from_targets("capture", 30.0, &oracle_targets(&model, 6, &offset, 3));
    let rec_path = dir.path().join("rec.json");
    rec.save(&rec_path).unwrap();

    let mut a = Session::open("a", &rec_path, &hand_path, None, IkConfig::interactive()).unwrap();
    a.set_offset([0.001, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    a.set_offset(offset).unwrap();
    let sa = a.solve_all().unwrap();
    let (_, path) = a.save_profile(dir.path()).unwrap();
    assert!(!a.is_dirty());

    let mut b = Session::open("b", &rec_path, &hand_path, Some(&path), IkConfig::interactive()).unwrap();
    assert_eq!(b.offset(), offset);
    let sb = b.solve_all().unwrap();
    assert_eq!(
        sa.rms.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        sb.rms.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert!(sb.convergence_rate == 1.0);
}

#[test]
fn no_op_offset_gives_identical_result() {
    let model = fixtures::inspire();
    let mut s = session(&model, &oracle_targets(&model, 3, &[0.0; 6], 4), None);
    let o = [0.002, 0.0, -0.001, 0.01, 0.0, 0.0];
    let first = s.set_offset(o).unwrap().clone();
    let again = s.set_offset(o).unwrap().clone();
    assert_eq!(first, again);
}

#[test]
fn offset_matching_the_perturbation_restores_baseline() {
    for model in [fixtures::twig(), fixtures::inspire()] {
        let cfg = IkConfig {
            tol: 1e-9,
            ..IkConfig::default()
        };
        let mut baseline = session(&model, &oracle_targets(&model, 2, &[0.0; 6], 5), None);
        baseline.set_config(cfg.clone()).unwrap();
        let p = [0.01, -0.008, 0.005, 0.05, -0.04, 0.03];
        let mut s = session(&model, &oracle_targets(&model, 2, &p, 5), None);
        let before = s.last().rms;
        s.set_config(cfg).unwrap();
        let after = s.set_offset(p).unwrap().rms;
        assert!(before > 1e-3, "{}: perturbation too small ({before})", model.name);
        assert!((after - baseline.last().rms).abs() < 1e-6, "{}: {after} vs {}", model.name, baseline.last().rms);
    }
}

#[test]
fn extreme_offset_fails_gracefully() {
    let model = fixtures::wuji();
    let mut s = session(&model, &oracle_targets(&model, 2, &[0.0; 6], 6), None);
    let r = s.set_offset([1e3, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap().clone();
    assert!(!r.converged);
    assert!(r.rms.is_finite() && r.rms > 900.0);
    assert!(s.is_dirty());
    assert!(matches!(
        s.set_offset([0.0, 0.0, f64::INFINITY, 0.0, 0.0, 0.0]),
        Err(SessionError::InvalidOffset(_))
    ));
    assert_eq!(s.offset()[0], 1e3);
}

#[test]
fn angles_are_wrapped() {
    let model = fixtures::twig();
    let mut s = session(&model, &oracle_targets(&model, 2, &[0.0; 6], 7), None);
    s.set_offset([0.0, 0.0, 0.0, 1.5 * PI, -PI, 2.0 * PI + 0.1]).unwrap();
    let o = s.offset();
    assert!((o[3] + 0.5 * PI).abs() < 1e-12);
    assert!((o[4] - PI).abs() < 1e-12);
    assert!((o[5] - 0.1).abs() < 1e-12);
    assert!(o[3..].iter().all(|a| *a > -PI && *a <= PI));
}

#[test]
fn stepping_clamps_and_returns_identical_results() {
    let model = fixtures::inspire();
    let mut s = session(&model, &oracle_targets(&model, 5, &[0.0; 6], 8), None);
    let at0 = s.last().clone();
    s.step_frame(100).unwrap();
    assert_eq!(s.cursor(), 4);
    s.step_frame(-2).unwrap();
    let at2 = s.last().clone();
    s.step_frame(1).unwrap();
    s.step_frame(-1).unwrap();
    assert_eq!(*s.last(), at2);
    s.step_frame(-100).unwrap();
    assert_eq!(s.cursor(), 0);
    assert_eq!(*s.last(), at0);
    s.seek(99).unwrap();
    assert_eq!(s.cursor(), 4);
}

#[test]
fn solve_all_on_oracle_recording_converges() {
    let model = fixtures::inspire();
    let mut s = session(&model, &oracle_targets(&model, 30, &[0.0; 6], 9), None);
    s.step_frame(7).unwrap();
    let summary = s.solve_all().unwrap();
    assert!(summary.convergence_rate >= 0.98, "{summary:?}");
    assert_eq!(summary.frames, 30);
    assert_eq!(s.last().rms, summary.rms[7]);
}

#[test]
fn failed_save_leaves_session_intact() {
    let model = fixtures::twig();
    let mut s = session(&model, &oracle_targets(&model, 2, &[0.0; 6], 10), None);
    s.set_offset([0.01, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let not_a_dir = dir.path().join("file");
    std::fs::write(&not_a_dir, "x").unwrap();
    let err = s.save_profile(&not_a_dir).unwrap_err();
    assert!(matches!(err, SessionError::Io { .. }));
    assert!(s.is_dirty());
    assert_eq!(s.offset()[0], 0.01);
    let (p, _) = s.save_profile(dir.path()).unwrap();
    assert_eq!(p.offset.translation.x, 0.01);
}

#[test]
fn replaying_the_call_log_reproduces_the_session() {
    let model = fixtures::inspire();
    let targets = oracle_targets(&model, 8, &[0.0; 6], 11);
    let rec = Recording::from_targets("synthetic", 30.0, &targets);
    let mut live = session(&model, &targets, None);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..25 {
        match rng.random_range(0..4) {
            0 | 1 => {
                let o: Offset = std::array::from_fn(|i| rng.random_range(-0.01..0.01) * if i < 3 { 1.0 } else { 5.0 });
                let _ = live.set_offset(o);
            }
            2 => {
                let _ = live.step_frame(rng.random_range(-3..4));
            }
            _ => {
                let _ = live.solve_all();
            }
        }
    }
    let _ = live.set_offset([0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0]);
    let replayed = Session::replay(
        "s2",
        model.clone(),
        rec,
        vec![None; 8],
        None,
        IkConfig::interactive(),
        live.log(),
    )
    .unwrap();
    assert_eq!(replayed.offset().map(f64::to_bits), live.offset().map(f64::to_bits));
    assert_eq!(replayed.cursor(), live.cursor());
    assert_eq!(replayed.last(), live.last());
    assert_eq!(replayed.profile(), live.profile());
    let (a, b) = (live.render_state().unwrap(), replayed.render_state().unwrap());
    assert_eq!(a.residual, b.residual);
    assert_eq!(a.hand, b.hand);

    // the log itself survives JSON
    let json = serde_json::to_string(live.log()).unwrap();
    let back: Vec<SessionCall> = serde_json::from_str(&json).unwrap();
    assert_eq!(back.len(), live.log().len());
}

#[test]
fn translation_sliders_move_the_hand_rigidly() {
    let model = fixtures::inspire();
    let o1 = [0.0, 0.0, 0.0, 0.05, -0.03, 0.02];
    let o2 = [0.012, -0.007, 0.004, 0.05, -0.03, 0.02];
    let mut s1 = session(&model, &oracle_targets(&model, 1, &o1, 13), Some(o1));
    let mut s2 = session(&model, &oracle_targets(&model, 1, &o2, 13), Some(o2));
    let caps = RenderCaps {
        hand_points: usize::MAX,
        ..RenderCaps::default()
    };
    s1.set_caps(caps);
    s2.set_caps(caps);
    let (v1, v2) = (s1.render_state().unwrap(), s2.render_state().unwrap());
    let hand = s1.recording().frames[0].hand_pose;
    let d = hand.rotation * nalgebra::Vector3::new(o2[0] - o1[0], o2[1] - o1[1], o2[2] - o1[2]);
    let (p1, p2) = (v1.hand.decode().unwrap(), v2.hand.decode().unwrap());
    assert_eq!(p1.len(), p2.len());
    for ((a, _), (b, _)) in p1.iter().zip(&p2) {
        for k in 0..3 {
            assert!(((b[k] - a[k]) as f64 - d[k]).abs() < 1e-5, "{a:?} {b:?} {d:?}");
        }
    }
}
