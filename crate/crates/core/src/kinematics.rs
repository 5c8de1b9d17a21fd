//! Forward kinematics and fingertip Jacobians.
//!
//! Fingertip `i` sits at `Trans(world_dummy · offset · T_i(q))`: the hand base hangs off a
//! virtual "dummy" frame placed at `world_dummy` (the tracked human hand pose), and
//! `offset` is the adjustable dummy→base transform.

use nalgebra::{DMatrix, Vector3};

use crate::handmodel::{HandModel, LinkParent};
pub use crate::pose::Pose;

/// Slack allowed on joint limits before a configuration is flagged.
pub const LIMIT_SLACK: f64 = 1e-9;

/// Joint angles in radians, one per entry of [`HandModel::joints`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointState(pub Vec<f64>);

impl JointState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Mid-range configuration of `model`.
    pub fn mid_range(model: &HandModel) -> Self {
        JointState(model.mid_range())
    }

    /// Build a full state from values for the active joints (in joint order);
    /// mimic joints are filled from their masters.
    pub fn from_active(model: &HandModel, active: &[f64]) -> Self {
        let idx = model.active_joints();
        assert_eq!(idx.len(), active.len(), "one value per active joint");
        let mut q = vec![0.0; model.full_dof];
        for (&j, &v) in idx.iter().zip(active) {
            q[j] = v;
        }
        apply_mimic(model, &JointState(q)).q
    }

    /// Values of the active joints, in joint order.
    pub fn active(&self, model: &HandModel) -> Vec<f64> {
        model.active_joints().iter().map(|&j| self.0[j]).collect()
    }

    pub fn within_limits(&self, model: &HandModel, slack: f64) -> bool {
        self.0
            .iter()
            .zip(&model.joints)
            .all(|(v, j)| j.limits.contains(*v, slack))
    }
}

impl std::ops::Index<usize> for JointState {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// World-frame fingertip positions, in the model's fingertip order.
#[derive(Debug, Clone, PartialEq)]
pub struct FingertipSet {
    pub positions: Vec<Vector3<f64>>,
}

impl FingertipSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn transformed(&self, g: &Pose) -> FingertipSet {
        FingertipSet {
            positions: self.positions.iter().map(|p| g.transform_point(p)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FkResult {
    pub fingertips: FingertipSet,
    /// World pose of every link, indexed like [`HandModel::links`].
    pub link_poses: Vec<Pose>,
    /// World pose of each revolute joint frame before its rotation is applied.
    pub joint_frames: Vec<Pose>,
    /// The configuration actually evaluated (mimics recomputed).
    pub q: JointState,
    /// Mimic joints that had to be clamped to their limits.
    pub clamped: Vec<usize>,
    /// Set when some input angle lies outside its limits by more than [`LIMIT_SLACK`].
    pub out_of_limits: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MimicApplied {
    pub q: JointState,
    pub clamped: Vec<usize>,
}

/// Overwrite every mimic joint with `k * q_master + c`, clamped to its limits.
pub fn apply_mimic(model: &HandModel, q: &JointState) -> MimicApplied {
    assert_eq!(q.len(), model.full_dof, "joint state length");
    let mut out = q.0.clone();
    let mut clamped = Vec::new();
    for (s, joint) in model.joints.iter().enumerate() {
        if let Some(m) = joint.mimic {
            let v = m.multiplier * q.0[m.master] + m.offset;
            let c = joint.limits.clamp(v);
            if c != v {
                clamped.push(s);
            }
            out[s] = c;
        }
    }
    MimicApplied {
        q: JointState(out),
        clamped,
    }
}

pub fn forward_kinematics(
    model: &HandModel,
    q: &JointState,
    world_dummy: &Pose,
    offset: &Pose,
) -> FkResult {
    let out_of_limits = !q.within_limits(model, LIMIT_SLACK);
    let MimicApplied { q, clamped } = apply_mimic(model, q);
    evaluate(model, q, clamped, out_of_limits, world_dummy, offset)
}

/// Forward kinematics that evaluates every joint, mimic or not, at the given angle.
/// This is the kinematics of a solver that ignores mimic couplings.
pub fn forward_kinematics_uncoupled(
    model: &HandModel,
    q: &JointState,
    world_dummy: &Pose,
    offset: &Pose,
) -> FkResult {
    assert_eq!(q.len(), model.full_dof, "joint state length");
    let out_of_limits = !q.within_limits(model, LIMIT_SLACK);
    evaluate(model, q.clone(), Vec::new(), out_of_limits, world_dummy, offset)
}

fn evaluate(
    model: &HandModel,
    q: JointState,
    clamped: Vec<usize>,
    out_of_limits: bool,
    world_dummy: &Pose,
    offset: &Pose,
) -> FkResult {
    let base = world_dummy * offset;
    let mut link_poses = vec![Pose::identity(); model.links.len()];
    let mut joint_frames = vec![Pose::identity(); model.full_dof];
    for &l in &model.link_order {
        link_poses[l] = match &model.links[l].parent {
            LinkParent::Root => base,
            LinkParent::Joint(j) => {
                let joint = &model.joints[*j];
                let frame = &link_poses[joint.parent_link] * &joint.origin_pose;
                joint_frames[*j] = frame;
                &frame * &Pose::from_axis_angle(&joint.axis, q.0[*j])
            }
            LinkParent::Fixed {
                link, origin_pose, ..
            } => &link_poses[*link] * origin_pose,
        };
    }
    let fingertips = FingertipSet {
        positions: model
            .fingertip_links
            .iter()
            .map(|&l| link_poses[l].translation)
            .collect(),
    };
    FkResult {
        fingertips,
        link_poses,
        joint_frames,
        q,
        clamped,
        out_of_limits,
    }
}

/// Per-joint position Jacobian with every joint treated as independent
/// (`3m × full_dof`, rows grouped per fingertip).
pub fn raw_jacobian(model: &HandModel, fk: &FkResult) -> DMatrix<f64> {
    let m = model.fingertip_count();
    let mut jac = DMatrix::zeros(3 * m, model.full_dof);
    for (i, &tip) in model.fingertip_links.iter().enumerate() {
        let p_tip = fk.fingertips.positions[i];
        for &j in &model.link_chain[tip] {
            let frame = &fk.joint_frames[j];
            let axis = frame.transform_vector(&model.joints[j].axis);
            let col = axis.cross(&(p_tip - frame.translation));
            jac.fixed_view_mut::<3, 1>(3 * i, j).copy_from(&col);
        }
    }
    jac
}

/// Fold mimic columns into their masters (`col_master += k · col_slave`) and zero the
/// mimic columns. A clamped mimic contributes nothing, matching the clamped kinematics.
pub fn fold_mimic_columns(model: &HandModel, raw: &DMatrix<f64>, clamped: &[usize]) -> DMatrix<f64> {
    let mut jac = raw.clone();
    for (s, joint) in model.joints.iter().enumerate() {
        if let Some(m) = joint.mimic {
            if !clamped.contains(&s) {
                let slave = raw.column(s).into_owned();
                let mut master = jac.column_mut(m.master);
                master.axpy(m.multiplier, &slave, 1.0);
            }
            jac.column_mut(s).fill(0.0);
        }
    }
    jac
}

/// `3m × full_dof` fingertip position Jacobian with respect to the independent joints.
/// Columns of mimic joints are zero; their effect is folded into the masters.
pub fn fingertip_jacobian(
    model: &HandModel,
    q: &JointState,
    world_dummy: &Pose,
    offset: &Pose,
) -> DMatrix<f64> {
    let fk = forward_kinematics(model, q, world_dummy, offset);
    fold_mimic_columns(model, &raw_jacobian(model, &fk), &fk.clamped)
}
