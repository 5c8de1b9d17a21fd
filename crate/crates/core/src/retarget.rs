//! Fingertip retargeting.
//!
//! The solver minimizes the stacked fingertip residual `e(q) = X* − x(q; offset)` with
//! damped least squares over the independent joints, `Δq = (JᵀJ + λI)⁻¹ Jᵀ e`,
//! clamping to joint limits after every step and recomputing mimic joints from their
//! masters. The best iterate seen is returned, so a solve never ends worse than it
//! started.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handmodel::{HandModel, Limits};
use crate::kinematics::{
    apply_mimic, fold_mimic_columns, forward_kinematics, forward_kinematics_uncoupled,
    raw_jacobian, FingertipSet, FkResult, JointState,
};
use crate::pose::Pose;

#[derive(Debug, Error)]
pub enum RetargetError {
    #[error("non-finite IK update at iteration {iteration} (damping too small or degenerate Jacobian)")]
    SingularUpdate { iteration: usize },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid IK config: {0}")]
    InvalidConfig(String),
    #[error("non-finite target")]
    NonFiniteTarget,
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("profile {path}: {source}")]
    ProfileIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("profile {path}: {source}")]
    ProfileFormat {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub max_iters: usize,
    /// λ in `(JᵀJ + λI)`.
    pub damping: f64,
    /// Fingertip RMS threshold, meters.
    pub tol: f64,
    /// Fraction of the damped step taken each iteration, in (0, 1].
    pub step_scale: f64,
    /// Rounds of the mimic correction loop.
    pub mimic_iters: usize,
    /// Optional per-joint pull toward the mid-range rest pose (full_dof entries,
    /// mimic entries ignored).
    pub joint_weight: Option<Vec<f64>>,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            damping: 1e-3,
            tol: 1e-3,
            step_scale: 1.0,
            mimic_iters: 5,
            joint_weight: None,
        }
    }
}

impl IkConfig {
    /// Bounded budget used by interactive re-solves.
    pub fn interactive() -> Self {
        Self {
            max_iters: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self, model: &HandModel) -> Result<(), RetargetError> {
        let bad = |m: &str| Err(RetargetError::InvalidConfig(m.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be > 0");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be ≥ 1");
        }
        if self.mimic_iters < 1 {
            return bad("mimic_iters must be ≥ 1");
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return bad("damping must be ≥ 0");
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return bad("step_scale must lie in (0, 1]");
        }
        if let Some(w) = &self.joint_weight {
            if w.len() != model.full_dof {
                return Err(RetargetError::DimensionMismatch {
                    what: "joint_weight",
                    expected: model.full_dof,
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad("joint_weight entries must be finite and ≥ 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetTarget {
    /// Human fingertip positions, world frame, in the hand's fingertip order.
    pub fingertip_targets: FingertipSet,
    /// Tracked human hand pose; the dummy base is pinned here.
    pub hand_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetargetResult {
    #[serde(serialize_with = "ser_q")]
    pub q: JointState,
    /// Per-fingertip error norms, meters.
    pub residual: Vec<f64>,
    pub rms: f64,
    pub converged: bool,
    /// Damped least-squares updates performed.
    pub iters_used: usize,
    /// Rounds run by the mimic correction loop (0 when it did not run).
    pub mimic_rounds: usize,
    /// Independent joints resting on a limit in the returned configuration.
    pub clamped_joints: Vec<usize>,
}

fn ser_q<S: serde::Serializer>(q: &JointState, s: S) -> Result<S::Ok, S::Error> {
    q.0.serialize(s)
}

/// Per-dataset, per-hand dummy-base offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub dataset_id: String,
    pub hand_id: String,
    pub offset: Pose,
    #[serde(default)]
    pub notes: String,
}

impl CalibrationProfile {
    pub fn identity(dataset_id: impl Into<String>, hand_id: impl Into<String>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            hand_id: hand_id.into(),
            offset: Pose::identity(),
            notes: String::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profiles serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetargetError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| RetargetError::ProfileIo {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetargetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RetargetError::ProfileIo {
            path: path.display().to_string(),
            source,
        })?;
        let p: Self = serde_json::from_str(&text).map_err(|source| RetargetError::ProfileFormat {
            path: path.display().to_string(),
            source,
        })?;
        if !p.offset.is_valid(1e-9) {
            return Err(RetargetError::InvalidConfig(format!(
                "profile {} has an invalid offset",
                path.display()
            )));
        }
        Ok(p)
    }

    /// File name inside a calibration store directory.
    pub fn file_name(&self) -> String {
        format!("{}__{}.profile.json", self.dataset_id, self.hand_id)
    }
}

// ---------------------------------------------------------------------------
// Solver

const MAX_REJECTS: usize = 24;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Coupling {
    /// Mimic joints follow their masters; only independent joints are variables.
    Folded,
    /// Every joint is a free variable (the kinematics of a mimic-unaware solver).
    Uncoupled,
}

struct Eval {
    fk: FkResult,
    error: DVector<f64>,
    residual: Vec<f64>,
    rms: f64,
}

fn eval(
    model: &HandModel,
    q: &JointState,
    target: &RetargetTarget,
    offset: &Pose,
    coupling: Coupling,
) -> Eval {
    let fk = match coupling {
        Coupling::Folded => forward_kinematics(model, q, &target.hand_pose, offset),
        Coupling::Uncoupled => forward_kinematics_uncoupled(model, q, &target.hand_pose, offset),
    };
    let m = model.fingertip_count();
    let mut error = DVector::zeros(3 * m);
    let mut residual = Vec::with_capacity(m);
    for (i, (x, t)) in fk
        .fingertips
        .positions
        .iter()
        .zip(&target.fingertip_targets.positions)
        .enumerate()
    {
        let e = t - x;
        error.fixed_rows_mut::<3>(3 * i).copy_from(&e);
        residual.push(e.norm());
    }
    let rms = (residual.iter().map(|r| r * r).sum::<f64>() / m as f64).sqrt();
    Eval {
        fk,
        error,
        residual,
        rms,
    }
}

fn check_inputs(
    model: &HandModel,
    target: &RetargetTarget,
    q: &JointState,
    cfg: &IkConfig,
) -> Result<(), RetargetError> {
    cfg.validate(model)?;
    if target.fingertip_targets.len() != model.fingertip_count() {
        return Err(RetargetError::DimensionMismatch {
            what: "fingertip targets",
            expected: model.fingertip_count(),
            found: target.fingertip_targets.len(),
        });
    }
    if q.len() != model.full_dof {
        return Err(RetargetError::DimensionMismatch {
            what: "joint state",
            expected: model.full_dof,
            found: q.len(),
        });
    }
    if !target.fingertip_targets.is_finite() || !target.hand_pose.is_valid(1e-6) {
        return Err(RetargetError::NonFiniteTarget);
    }
    Ok(())
}

fn at_limit(model: &HandModel, limits: &[Limits], q: &JointState) -> Vec<usize> {
    model
        .active_joints()
        .into_iter()
        .filter(|&j| q[j] <= limits[j].lower || q[j] >= limits[j].upper)
        .collect()
}

fn dls(
    model: &HandModel,
    target: &RetargetTarget,
    offset: &Pose,
    q_init: &JointState,
    cfg: &IkConfig,
    max_iters: usize,
    coupling: Coupling,
) -> Result<RetargetResult, RetargetError> {
    let (vars, limits): (Vec<usize>, Vec<Limits>) = match coupling {
        Coupling::Folded => (model.active_joints(), model.effective_limits()),
        Coupling::Uncoupled => (
            (0..model.full_dof).collect(),
            model.joints.iter().map(|j| j.limits).collect(),
        ),
    };
    let project = |q: &mut Vec<f64>| -> JointState {
        for &j in &vars {
            q[j] = limits[j].clamp(q[j]);
        }
        match coupling {
            Coupling::Folded => apply_mimic(model, &JointState(q.clone())).q,
            Coupling::Uncoupled => JointState(q.clone()),
        }
    };
    let rest = model.mid_range();
    let weights: Option<Vec<f64>> = cfg
        .joint_weight
        .as_ref()
        .map(|w| vars.iter().map(|&j| w[j]).collect());

    let mut q = project(&mut q_init.0.clone());
    let mut cur = eval(model, &q, target, offset, coupling);
    let mut best = (q.clone(), cur.residual.clone(), cur.rms);
    let mut iters = 0;
    let mut lambda = cfg.damping;
    let n = vars.len();
    while best.2 > cfg.tol && iters < max_iters {
        let raw = raw_jacobian(model, &cur.fk);
        let jac = match coupling {
            Coupling::Folded => fold_mimic_columns(model, &raw, &cur.fk.clamped),
            Coupling::Uncoupled => raw,
        };
        let ja = DMatrix::from_fn(jac.nrows(), n, |r, c| jac[(r, vars[c])]);
        let jtj = ja.transpose() * &ja;
        let mut rhs = ja.transpose() * &cur.error;
        let mut diag = DVector::from_element(n, 0.0);
        if let Some(w) = &weights {
            for (d, &j) in vars.iter().enumerate() {
                diag[d] = w[d];
                rhs[d] += w[d] * (rest[j] - q[j]);
            }
        }
        iters += 1;
        // Damped step with the configured λ. If it fails to reduce the residual, λ grows
        // tenfold and the step is recomputed from the same Jacobian; after an accepted
        // step λ relaxes back toward the configured value.
        let mut accepted = None;
        for attempt in 0..=MAX_REJECTS {
            let mut lhs = jtj.clone();
            for d in 0..n {
                lhs[(d, d)] += lambda + diag[d];
            }
            let step = lhs
                .cholesky()
                .map(|c| c.solve(&rhs))
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .ok_or(RetargetError::SingularUpdate { iteration: iters })?;
            let mut next = q.0.clone();
            for (d, &j) in vars.iter().enumerate() {
                next[j] += cfg.step_scale * step[d];
            }
            let qn = project(&mut next);
            let en = eval(model, &qn, target, offset, coupling);
            if en.rms < cur.rms {
                accepted = Some((qn, en));
                if attempt == 0 {
                    lambda = (lambda / 10.0).max(cfg.damping);
                }
                break;
            }
            lambda = if lambda > 0.0 { lambda * 10.0 } else { 1e-9 };
        }
        // no descent at any damping: a stationary point of the clamped problem
        let Some((qn, en)) = accepted else { break };
        q = qn;
        cur = en;
        if cur.rms < best.2 {
            best = (q.clone(), cur.residual.clone(), cur.rms);
        }
    }
    let (q, residual, rms) = best;
    Ok(RetargetResult {
        clamped_joints: at_limit(model, &limits, &q),
        q,
        residual,
        rms,
        converged: rms <= cfg.tol,
        iters_used: iters,
        mimic_rounds: 0,
    })
}

/// Damped least-squares fingertip IK with mimic joints folded into their masters.
pub fn solve_ik(
    model: &HandModel,
    target: &RetargetTarget,
    offset: &Pose,
    q_init: &JointState,
    cfg: &IkConfig,
) -> Result<RetargetResult, RetargetError> {
    check_inputs(model, target, q_init, cfg)?;
    dls(model, target, offset, q_init, cfg, cfg.max_iters, Coupling::Folded)
}

/// The same solver with every joint treated as independent, as a mimic-unaware IK
/// engine would. Its output generally violates mimic constraints and is the input
/// that [`mimic_correction_loop`] repairs.
pub fn solve_ik_uncoupled(
    model: &HandModel,
    target: &RetargetTarget,
    offset: &Pose,
    q_init: &JointState,
    cfg: &IkConfig,
) -> Result<RetargetResult, RetargetError> {
    check_inputs(model, target, q_init, cfg)?;
    dls(model, target, offset, q_init, cfg, cfg.max_iters, Coupling::Uncoupled)
}

/// Evaluate the coupled residual at `q` (mimics recomputed) without solving.
pub fn evaluate_residual(
    model: &HandModel,
    target: &RetargetTarget,
    offset: &Pose,
    q: &JointState,
    tol: f64,
) -> RetargetResult {
    let e = eval(model, q, target, offset, Coupling::Folded);
    let limits = model.effective_limits();
    RetargetResult {
        clamped_joints: at_limit(model, &limits, &e.fk.q),
        q: e.fk.q,
        residual: e.residual,
        rms: e.rms,
        converged: e.rms <= tol,
        iters_used: 0,
        mimic_rounds: 0,
    }
}

/// Alternate mimic recomputation with a short re-solve over the independent joints,
/// `cfg.mimic_iters` times or until the RMS changes by less than `tol / 10`.
pub fn mimic_correction_loop(
    model: &HandModel,
    q: &JointState,
    target: &RetargetTarget,
    offset: &Pose,
    cfg: &IkConfig,
) -> Result<RetargetResult, RetargetError> {
    check_inputs(model, target, q, cfg)?;
    if model.active_dof == model.full_dof {
        let mut r = evaluate_residual(model, target, offset, q, cfg.tol);
        r.mimic_rounds = 1;
        return Ok(r);
    }
    let budget = (cfg.max_iters / cfg.mimic_iters).max(1);
    let mut current = evaluate_residual(model, target, offset, &apply_mimic(model, q).q, cfg.tol);
    let mut total_iters = 0;
    let mut rounds = 0;
    for _ in 0..cfg.mimic_iters {
        let corrected = apply_mimic(model, &current.q).q;
        let next = dls(model, target, offset, &corrected, cfg, budget, Coupling::Folded)?;
        total_iters += next.iters_used;
        rounds += 1;
        let change = (current.rms - next.rms).abs();
        current = next;
        if change < cfg.tol / 10.0 {
            break;
        }
    }
    current.iters_used = total_iters;
    current.mimic_rounds = rounds;
    Ok(current)
}

/// Solve one frame with a calibration profile: `solve_ik` from `q_prev` (or mid-range),
/// then the mimic correction loop.
pub fn retarget_frame(
    model: &HandModel,
    target: &RetargetTarget,
    profile: &CalibrationProfile,
    q_prev: Option<&JointState>,
    cfg: &IkConfig,
) -> Result<RetargetResult, RetargetError> {
    let mid = JointState::mid_range(model);
    let q_init = q_prev.unwrap_or(&mid);
    let first = solve_ik(model, target, &profile.offset, q_init, cfg)?;
    let mut out = mimic_correction_loop(model, &first.q, target, &profile.offset, cfg)?;
    if first.rms < out.rms {
        // keep the better of the two; both satisfy the mimic constraints
        let rounds = out.mimic_rounds;
        let extra = out.iters_used;
        out = first.clone();
        out.mimic_rounds = rounds;
        out.iters_used += extra;
    } else {
        out.iters_used += first.iters_used;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRetarget {
    pub results: Vec<RetargetResult>,
    /// Indices of frames that did not converge.
    pub flagged: Vec<usize>,
    pub convergence_rate: f64,
}

/// Retarget a time-ordered sequence. Frame `t` warm-starts from the solution of the
/// latest converged frame before it (frame `t−1` whenever that one converged).
pub fn retarget_trajectory(
    model: &HandModel,
    targets: &[RetargetTarget],
    profile: &CalibrationProfile,
    cfg: &IkConfig,
) -> Result<TrajectoryRetarget, RetargetError> {
    if targets.is_empty() {
        return Err(RetargetError::EmptyTrajectory);
    }
    let mut results = Vec::with_capacity(targets.len());
    let mut flagged = Vec::new();
    let mut warm: Option<JointState> = None;
    for (t, target) in targets.iter().enumerate() {
        let r = retarget_frame(model, target, profile, warm.as_ref(), cfg)?;
        if r.converged {
            warm = Some(r.q.clone());
        } else {
            flagged.push(t);
        }
        results.push(r);
    }
    let convergence_rate = 1.0 - flagged.len() as f64 / targets.len() as f64;
    Ok(TrajectoryRetarget {
        results,
        flagged,
        convergence_rate,
    })
}

/// Re-express capture-device poses in the camera frame: `P_cam = extrinsic · P_dev`.
pub fn align_capture_frames(poses: &[Pose], extrinsic: &Pose) -> Vec<Pose> {
    poses.iter().map(|p| extrinsic * p).collect()
}
