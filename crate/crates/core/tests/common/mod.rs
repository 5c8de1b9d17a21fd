#![allow(dead_code)]

use std::collections::BTreeMap;

use dexforge_core::dataset::{cloud_address, PoseFrame, states_from_joints, Frame, Source, Trajectory};
use dexforge_core::kinematics::{forward_kinematics, JointState};
use dexforge_core::pointcloud::{Point, PointCloud, PointOrigin};
use dexforge_core::retarget::RetargetTarget;
use dexforge_core::{HandModel, Pose};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform sample of the independent joints inside their effective limits.
pub fn random_q(model: &HandModel, rng: &mut impl Rng) -> JointState {
    let lim = model.effective_limits();
    let active: Vec<f64> = model
        .active_joints()
        .into_iter()
        .map(|j| rng.random_range(lim[j].lower..=lim[j].upper))
        .collect();
    JointState::from_active(model, &active)
}

pub fn random_pose(rng: &mut impl Rng) -> Pose {
    let xyz = [
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
    ];
    let rpy = [
        rng.random_range(-3.0..3.0),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.0..3.0),
    ];
    Pose::from_xyz_rpy(xyz, rpy)
}

pub fn fk_target(model: &HandModel, q: &JointState, hand: Pose, offset: &Pose) -> RetargetTarget {
    RetargetTarget {
        fingertip_targets: forward_kinematics(model, q, &hand, offset).fingertips,
        hand_pose: hand,
    }
}

/// Largest |q_s − (k·q_m + c)| over every mimic joint.
pub fn mimic_violation(model: &HandModel, q: &JointState) -> f64 {
    model
        .joints
        .iter()
        .enumerate()
        .filter_map(|(s, j)| j.mimic.as_ref().map(|m| (s, m)))
        .map(|(s, m)| (q[s] - (m.multiplier * q[m.master] + m.offset)).abs())
        .fold(0.0, f64::max)
}

pub fn tiny_cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| Point {
                xyz: Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.3..0.8)),
                rgb: [rng.random(), rng.random(), rng.random()],
                pixel: None,
                origin: PointOrigin::Scene,
            })
            .collect(),
    )
}

/// A smooth synthetic trajectory with one cloud shared by every `cloud_every` frames.
pub fn synthetic_trajectory(model: &HandModel, id: &str, n: usize, source: Source, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim = model.effective_limits();
    let active = model.active_joints();
    let phase: Vec<f64> = active.iter().map(|_| rng.random_range(0.0..6.0)).collect();
    let wrists: Vec<Pose> = (0..n)
        .map(|t| {
            let s = t as f64 / 30.0;
            Pose::from_xyz_rpy([0.1 * s, 0.05 * s.sin(), 0.4], [0.2 * s, -0.1, 0.3 * s.cos()])
        })
        .collect();
    let qs: Vec<JointState> = (0..n)
        .map(|t| {
            let a: Vec<f64> = active
                .iter()
                .zip(&phase)
                .map(|(&j, p)| {
                    let mid = 0.5 * (lim[j].lower + lim[j].upper);
                    mid + 0.4 * (lim[j].upper - lim[j].lower) * (t as f64 / 20.0 + p).sin()
                })
                .collect();
            JointState::from_active(model, &a)
        })
        .collect();
    let states = states_from_joints(model, model.side, &wrists, &qs).unwrap();
    let mut clouds = BTreeMap::new();
    let frames = states
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let c = tiny_cloud(seed * 1000 + (t / 5) as u64, 40);
            let key = cloud_address(&c);
            clouds.insert(key.clone(), c);
            Frame {
                t,
                cloud_ref: key,
                instruction: "pick up the cup".into(),
                proprio: *s,
                action_chunk_ref: t,
            }
        })
        .collect();
    let actions = (0..n).map(|t| states[(t + 1).min(n - 1)]).collect();
    Trajectory {
        id: id.into(),
        hand_id: model.name.clone(),
        side: model.side,
        source,
        pose_frame: PoseFrame::Wrist,
        fps: 30.0,
        frames,
        actions,
        valid: true,
        segmentation: (0, n),
        converged: vec![true; n],
        clouds,
    }
}
