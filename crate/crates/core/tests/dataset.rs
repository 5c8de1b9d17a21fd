mod common;

use common::{fk_target, synthetic_trajectory, tiny_cloud};
use dexforge_core::dataset::*;
use dexforge_core::faas::{decode_state, FaasVector};
use dexforge_core::fixtures;
use dexforge_core::kinematics::JointState;
use dexforge_core::retarget::{retarget_trajectory, CalibrationProfile, IkConfig};
use dexforge_core::Pose;
use std::collections::BTreeMap;
use std::path::Path;

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn fifty_frame_shard_round_trips_bit_exact() {
    let model = fixtures::inspire();
    let traj = synthetic_trajectory(&model, "inspire-pick-000", 50, Source::Human, 1);
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_trajectory(&traj, &a).unwrap();
    let back = read_trajectory(&a).unwrap();
    assert_eq!(back, traj);
    for (x, y) in back.frames.iter().zip(&traj.frames) {
        assert_eq!(x.proprio.mask, y.proprio.mask);
        let bits = |v: &FaasVector| v.values.map(f64::to_bits);
        assert_eq!(bits(&x.proprio), bits(&y.proprio));
    }
    write_trajectory(&back, &b).unwrap();
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_eq!(traj.clouds.len(), 10);
}

#[test]
fn empty_trajectory_is_rejected() {
    let model = fixtures::twig();
    let mut traj = synthetic_trajectory(&model, "t", 3, Source::Robot, 2);
    traj.frames.clear();
    traj.actions.clear();
    traj.converged.clear();
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(write_trajectory(&traj, tmp.path()), Err(DatasetError::EmptyTrajectory(_))));
}

#[test]
fn unquantized_payload_is_rejected() {
    let model = fixtures::twig();
    let mut traj = synthetic_trajectory(&model, "t", 4, Source::Robot, 3);
    let slot = (0..82).find(|&i| traj.actions[1].mask.get(i)).unwrap();
    traj.actions[1].values[slot] += 1e-12;
    assert!(matches!(traj.validate(), Err(DatasetError::Invalid(_))));
}

#[test]
fn damaged_shards_are_detected() {
    let model = fixtures::twig();
    let traj = synthetic_trajectory(&model, "t", 12, Source::Human, 4);
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_trajectory(&traj, dir).unwrap();

    let ap = dir.join("actions.bin");
    let good = std::fs::read(&ap).unwrap();
    std::fs::write(&ap, &good[..good.len() - 7]).unwrap();
    assert!(matches!(read_trajectory(dir), Err(DatasetError::CorruptShard { .. })));
    std::fs::write(&ap, &good).unwrap();

    let blob = std::fs::read_dir(dir.join("clouds")).unwrap().next().unwrap().unwrap().path();
    let cb = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &cb[..cb.len() / 2]).unwrap();
    assert!(matches!(read_trajectory(dir), Err(DatasetError::CorruptShard { .. })));
    std::fs::write(&blob, &cb).unwrap();

    let ip = dir.join("index.json");
    let idx = std::fs::read_to_string(&ip).unwrap();
    std::fs::write(&ip, idx.replace("\"version\": 1", "\"version\": 2")).unwrap();
    assert!(matches!(
        read_trajectory(dir),
        Err(DatasetError::VersionMismatch { found: 2, expected: 1, .. })
    ));
    std::fs::write(&ip, &idx[..idx.len() / 2]).unwrap();
    assert!(matches!(read_trajectory(dir), Err(DatasetError::CorruptShard { .. })));
    std::fs::write(&ip, &idx).unwrap();
    assert_eq!(read_trajectory(dir).unwrap(), traj);
}

/// Walk a cursor forward by the rate ratio, keeping the nearest frame each time.
fn stride_walk(n: usize, from: f64, to: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0.0_f64;
    while pos.round() < n as f64 {
        out.push(pos.round() as usize);
        pos += from / to;
    }
    out
}

#[test]
fn downsampling_keeps_the_stride_walk() {
    let model = fixtures::inspire();
    let traj = synthetic_trajectory(&model, "d", 60, Source::Human, 5);

    assert_eq!(downsample_motion(&traj, 30.0).unwrap(), traj);

    let half = downsample_motion(&traj, 15.0).unwrap();
    assert_eq!(half.frames.len(), 30);
    for (k, f) in half.frames.iter().enumerate() {
        assert_eq!(f.proprio, traj.frames[2 * k].proprio);
        assert_eq!(f.t, k);
    }
    assert_eq!(half.fps, 15.0);

    let fifty = synthetic_trajectory(&model, "d50", 50, Source::Human, 6);
    let third = downsample_motion(&fifty, 10.0).unwrap();
    let oracle = stride_walk(50, 30.0, 10.0);
    assert_eq!(oracle.len(), 17);
    assert_eq!(*oracle.last().unwrap(), 48);
    assert_eq!(stride_indices(50, 30.0, 10.0).unwrap(), oracle);
    for (f, &i) in third.frames.iter().zip(&oracle) {
        assert_eq!(f.proprio, fifty.frames[i].proprio);
        assert_eq!(f.cloud_ref, fifty.frames[i].cloud_ref);
    }
    // human actions point at the next kept frame, not the next raw one
    for k in 0..16 {
        assert_eq!(third.actions[k], third.frames[k + 1].proprio);
    }
    assert_eq!(third.actions[16], third.frames[16].proprio);
    third.validate().unwrap();

    assert!(matches!(downsample_motion(&traj, 60.0), Err(DatasetError::InvalidRate(_))));
    assert!(matches!(downsample_motion(&traj, -1.0), Err(DatasetError::InvalidRate(_))));
}

#[test]
fn robot_actions_are_subselected_and_stale_clouds_dropped() {
    let model = fixtures::twig();
    let traj = synthetic_trajectory(&model, "r", 30, Source::Robot, 7);
    let out = downsample_motion(&traj, 3.0).unwrap();
    assert_eq!(out.frames.len(), 3);
    for (k, i) in [0, 10, 20].into_iter().enumerate() {
        assert_eq!(out.actions[k], traj.actions[i]);
    }
    // frames 0, 10, 20 use clouds 0, 2, 4 of 6
    assert_eq!(out.clouds.len(), 3);
}

#[test]
fn chunks_cover_the_horizon_and_pad_the_tail() {
    let model = fixtures::inspire();
    let side = model.side;
    let traj = synthetic_trajectory(&model, "c", 20, Source::Human, 8);

    let single = build_chunks(&traj, 1).unwrap();
    for (c, a) in single.iter().zip(&traj.actions) {
        assert_eq!(c.chunk.actions.len(), 1);
        assert_eq!(c.pad, vec![false]);
        let d = decode_state(&c.chunk.actions[0], &model, side).unwrap();
        assert_eq!(d.wrist, Pose::identity());
        assert_eq!(d.q, decode_state(a, &model, side).unwrap().q);
    }

    let h = 8;
    let chunks = build_chunks(&traj, h).unwrap();
    let last = chunks.last().unwrap();
    assert_eq!(last.pad.iter().filter(|p| **p).count(), h - 1);
    assert!(!last.pad[0]);
    // repeats of the last action: identity wrist (up to w⁻¹·w round-off), same joints
    let first = decode_state(&last.chunk.actions[0], &model, side).unwrap();
    for a in &last.chunk.actions {
        let d = decode_state(a, &model, side).unwrap();
        assert!(d.wrist.max_abs_diff(&Pose::identity()) < 1e-12);
        assert_eq!(d.q, first.q);
    }
    assert_eq!(chunks[12].pad.iter().filter(|p| **p).count(), 0);
    assert_eq!(chunks[13].pad.iter().filter(|p| **p).count(), 1);

    for c in chunks.iter().filter(|c| !c.pad.iter().any(|p| *p)) {
        let base = traj.actions[c.t].wrist(side).unwrap().unwrap();
        let decoded = dexforge_core::faas::decode_chunk(&c.chunk, &base, &model, side).unwrap();
        for (k, d) in decoded.iter().enumerate() {
            let raw = traj.actions[c.t + k].wrist(side).unwrap().unwrap();
            assert!(d.wrist.max_abs_diff(&raw) < 1e-9, "frame {} step {k}", c.t);
        }
    }
    assert!(build_chunks(&traj, 0).is_err());
}

#[test]
fn filter_reports_reasons() {
    let model = fixtures::twig();
    let good = synthetic_trajectory(&model, "good", 50, Source::Human, 9);
    let mut bad = synthetic_trajectory(&model, "bad", 50, Source::Human, 10);
    bad.converged[17] = false;
    let short = synthetic_trajectory(&model, "short", 3, Source::Human, 11);
    let cfg = FilterConfig {
        min_frames: 5,
        ..Default::default()
    };

    let (kept, dropped) = filter_invalid(vec![good.clone()], &cfg);
    assert_eq!(kept.len(), 1);
    assert!(dropped.is_empty());

    let (kept, dropped) = filter_invalid(vec![good, bad, short], &cfg);
    assert_eq!(kept.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(), ["good"]);
    assert_eq!(dropped[0].id, "bad");
    assert_eq!(dropped[0].reasons, ["convergence 98% < 100%"]);
    assert_eq!(dropped[1].reasons, ["length 3 < 5"]);

    let (kept, dropped) = filter_invalid(Vec::new(), &cfg);
    assert!(kept.is_empty() && dropped.is_empty());
}

#[test]
fn mixer_matches_weights_within_binomial_bounds() {
    let spec = MixSpec {
        human_count: 20,
        robot_count: 10,
        human_weight: 1.0,
        robot_weight: 1.0,
        seed: 42,
    };
    let batches = 10_000;
    let size = 16;
    let mut stream = mix_batches(20, 10, &spec, size).unwrap();
    let mut human = 0usize;
    for batch in stream.by_ref().take(batches) {
        assert_eq!(batch.len(), size);
        human += batch.iter().filter(|b| b.source == Source::Human).count();
    }
    let n = (batches * size) as f64;
    let p = 2.0 / 3.0;
    let sigma = (p * (1.0 - p) / n).sqrt();
    let frac = human as f64 / n;
    assert!((frac - p).abs() < 3.0 * sigma, "{frac} vs {p} ± {}", 3.0 * sigma);
    assert_eq!(stream.histogram, [human, batches * size - human]);
    assert!(!stream.epoch_histograms.is_empty());
    assert!(stream.epoch_histograms.iter().all(|h| h[0] + h[1] == 30));
}

#[test]
fn mixer_is_seeded_and_draws_without_replacement() {
    let spec = MixSpec {
        human_count: 20,
        robot_count: 10,
        human_weight: 1.0,
        robot_weight: 1.0,
        seed: 7,
    };
    let a: Vec<_> = mix_batches(25, 12, &spec, 8).unwrap().take(50).collect();
    let b: Vec<_> = mix_batches(25, 12, &spec, 8).unwrap().take(50).collect();
    assert_eq!(a, b);
    let other: Vec<_> = mix_batches(25, 12, &MixSpec { seed: 8, ..spec.clone() }, 8)
        .unwrap()
        .take(50)
        .collect();
    assert_ne!(a, other);

    let human: Vec<usize> = a
        .iter()
        .flatten()
        .filter(|b| b.source == Source::Human)
        .map(|b| b.index)
        .collect();
    for pass in human.chunks_exact(20) {
        let mut seen = pass.to_vec();
        seen.sort();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
    }

    let robot_only = MixSpec { human_count: 0, ..spec };
    assert!(mix_batches(0, 10, &robot_only, 4)
        .unwrap()
        .take(100)
        .flatten()
        .all(|b| b.source == Source::Robot));
}

#[test]
fn ingest_uses_next_state_as_action() {
    let model = fixtures::twig();
    let profile = CalibrationProfile::identity("synthetic", &model.name);
    let mid = JointState::mid_range(&model);
    let lim = model.effective_limits();
    let active = model.active_joints();
    let n = 8;
    let wrists: Vec<Pose> = (0..n).map(|t| Pose::from_xyz_rpy([0.01 * t as f64, 0.0, 0.3], [0.0; 3])).collect();
    let mut targets: Vec<_> = (0..n)
        .map(|t| {
            let a: Vec<f64> = active
                .iter()
                .map(|&j| mid[j] + 0.02 * t as f64 * (lim[j].upper - lim[j].lower))
                .collect();
            fk_target(&model, &JointState::from_active(&model, &a), wrists[t], &Pose::identity())
        })
        .collect();
    targets[5].fingertip_targets.positions[0].x += 5.0;
    let rt = retarget_trajectory(&model, &targets, &profile, &IkConfig::default()).unwrap();
    assert_eq!(rt.flagged, [5]);

    let traj = ingest(Ingest {
        id: "twig-000",
        model: &model,
        side: model.side,
        source: Source::Human,
        pose_frame: PoseFrame::Palm,
        fps: 30.0,
        instruction: "wave",
        wrists: &wrists,
        retargeted: &rt,
        clouds: (0..n).map(|t| tiny_cloud(t as u64 % 2, 10)).collect(),
        segmentation: Some((100, 108)),
    })
    .unwrap();
    assert!(!traj.valid);
    assert_eq!(traj.clouds.len(), 2);
    assert_eq!(traj.converged.iter().filter(|c| !**c).count(), 1);
    for t in 0..n - 1 {
        assert_eq!(traj.actions[t], traj.frames[t + 1].proprio);
    }
    assert_eq!(traj.actions[n - 1], traj.frames[n - 1].proprio);
    let q3 = decode_state(&traj.frames[3].proprio, &model, model.side).unwrap().q;
    for (a, b) in q3.0.iter().zip(&rt.results[3].q.0) {
        assert!((a - b).abs() < 1e-6);
    }
    let dir = tempfile::tempdir().unwrap();
    write_trajectory(&traj, dir.path()).unwrap();
    assert_eq!(read_trajectory(dir.path()).unwrap().pose_frame, PoseFrame::Palm);
}
