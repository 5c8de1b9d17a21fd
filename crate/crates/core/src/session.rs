//! A live calibration session over one recording: six offset sliders, a frame cursor,
//! a re-solve after every adjustment, profile persistence and the view payload the
//! GUI draws.
//!
//! Every accepted state-changing call is appended to a log; [`Session::replay`]
//! rebuilds the same state from it. Calls rejected by validation change nothing and are
//! not logged.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PoseFrame;
use crate::handmodel::{load_hand_model, HandModel, HandModelError};
use crate::kinematics::{forward_kinematics, FingertipSet};
use crate::pointcloud::{downsample_fps, load_cloud, sample_hand_surface, PointCloud, PointCloudError};
use crate::pose::{Pose, XyzRpy};
use crate::retarget::{
    retarget_frame, retarget_trajectory, CalibrationProfile, IkConfig, RetargetError, RetargetResult,
    RetargetTarget,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("recording {path}: {message}")]
    Recording { path: String, message: String },
    #[error("hand model: {0}")]
    Hand(#[from] HandModelError),
    #[error("profile {path}: {message}")]
    Profile { path: String, message: String },
    #[error("solver: {0}")]
    Solver(#[from] RetargetError),
    #[error("scene cloud: {0}")]
    Cloud(#[from] PointCloudError),
    #[error("invalid offset: {0}")]
    InvalidOffset(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Recordings

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingFrame {
    /// Tracked human hand pose (world frame); the dummy base is pinned here.
    pub hand_pose: Pose,
    /// Human fingertip positions in the hand model's fingertip order, meters.
    pub fingertips: Vec<[f64; 3]>,
    /// Scene cloud file, relative to the recording file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
}

impl RecordingFrame {
    pub fn target(&self) -> RetargetTarget {
        RetargetTarget {
            fingertip_targets: FingertipSet {
                positions: self.fingertips.iter().map(|p| Vector3::from(*p)).collect(),
            },
            hand_pose: self.hand_pose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recording {
    pub dataset_id: String,
    /// Frame of `hand_pose`; carried into packed trajectories.
    #[serde(default)]
    pub pose_frame: PoseFrame,
    pub fps: f64,
    pub frames: Vec<RecordingFrame>,
}

impl Recording {
    /// Recording of plain IK targets, without scene clouds.
    pub fn from_targets(dataset_id: impl Into<String>, fps: f64, targets: &[RetargetTarget]) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            pose_frame: PoseFrame::default(),
            fps,
            frames: targets
                .iter()
                .map(|t| RecordingFrame {
                    hand_pose: t.hand_pose,
                    fingertips: t.fingertip_targets.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
                    scene: None,
                })
                .collect(),
        }
    }

    pub fn targets(&self) -> Vec<RetargetTarget> {
        self.frames.iter().map(RecordingFrame::target).collect()
    }

    pub fn validate(&self, model: &HandModel) -> Result<(), String> {
        if self.frames.is_empty() {
            return Err("no frames".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(format!("fps {} must be > 0", self.fps));
        }
        let n = model.fingertip_links.len();
        for (i, f) in self.frames.iter().enumerate() {
            if f.fingertips.len() != n {
                return Err(format!(
                    "frames[{i}].fingertips has {} entries, hand `{}` has {n} fingertips",
                    f.fingertips.len(),
                    model.name
                ));
            }
            if f.fingertips.iter().flatten().any(|x| !x.is_finite()) {
                return Err(format!("frames[{i}].fingertips is not finite"));
            }
            if !f.hand_pose.is_valid(1e-9) {
                return Err(format!("frames[{i}].hand_pose is not a rigid transform"));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::Recording {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| SessionError::Recording {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("recordings serialize") + "\n";
        std::fs::write(path, text).map_err(|source| SessionError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Read every referenced scene cloud, resolving paths against `base_dir`.
    pub fn load_scenes(&self, base_dir: &Path) -> Result<Vec<Option<PointCloud>>, SessionError> {
        self.frames
            .iter()
            .map(|f| match &f.scene {
                Some(rel) => Ok(Some(load_cloud(base_dir.join(rel))?)),
                None => Ok(None),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Offsets and profiles

/// Slider values: translation in meters, then roll, pitch, yaw in radians.
pub type Offset = [f64; 6];

/// Wrap an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

pub fn normalize_offset(v: Offset) -> Result<Offset, SessionError> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(SessionError::InvalidOffset(format!("component {i} is {}", v[i])));
    }
    let mut out = v;
    for a in &mut out[3..] {
        *a = wrap_angle(*a);
    }
    Ok(out)
}

pub fn offset_pose(v: &Offset) -> Pose {
    Pose::from_xyz_rpy([v[0], v[1], v[2]], [v[3], v[4], v[5]])
}

/// Same JSON shape as [`CalibrationProfile`], with the offset written as the exact
/// slider values instead of angles re-extracted from the rotation matrix.
#[derive(Serialize, Deserialize)]
struct ProfileDoc {
    dataset_id: String,
    hand_id: String,
    offset: XyzRpy,
    #[serde(default)]
    notes: String,
}

/// Read a profile file together with its exact slider values.
pub fn load_profile_offset(path: impl AsRef<Path>) -> Result<(CalibrationProfile, Offset), SessionError> {
    let path = path.as_ref();
    let err = |message: String| SessionError::Profile {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let doc: ProfileDoc = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let o = doc.offset;
    let offset = normalize_offset([o.xyz[0], o.xyz[1], o.xyz[2], o.rpy[0], o.rpy[1], o.rpy[2]])
        .map_err(|e| err(e.to_string()))?;
    let profile = CalibrationProfile {
        dataset_id: doc.dataset_id,
        hand_id: doc.hand_id,
        offset: offset_pose(&offset),
        notes: doc.notes,
    };
    Ok((profile, offset))
}

// ---------------------------------------------------------------------------
// Session

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SessionCall {
    SetOffset { offset: Offset },
    StepFrame { delta: i64 },
    Seek { frame: usize },
    SolveAll,
    SetConfig { config: IkConfig },
}

/// Upper bounds on what [`Session::render_state`] sends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderCaps {
    pub scene_points: usize,
    pub hand_points: usize,
    /// Hand surface samples per square meter before capping.
    pub hand_density: f64,
}

impl Default for RenderCaps {
    fn default() -> Self {
        Self {
            scene_points: 20_000,
            hand_points: 4_000,
            hand_density: 2e5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveAllSummary {
    pub frames: usize,
    pub convergence_rate: f64,
    pub flagged: Vec<usize>,
    pub rms: Vec<f64>,
    pub mean_rms: f64,
    pub max_rms: f64,
}

/// Points as base64 little-endian f32 xyz triplets plus base64 RGB bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudPayload {
    pub count: usize,
    pub xyz: String,
    pub rgb: String,
}

impl CloudPayload {
    pub fn encode(cloud: &PointCloud) -> Self {
        let mut xyz = Vec::with_capacity(cloud.len() * 12);
        let mut rgb = Vec::with_capacity(cloud.len() * 3);
        for p in &cloud.points {
            for c in p.xyz.iter() {
                xyz.extend_from_slice(&(*c as f32).to_le_bytes());
            }
            rgb.extend_from_slice(&p.rgb);
        }
        Self {
            count: cloud.len(),
            xyz: B64.encode(xyz),
            rgb: B64.encode(rgb),
        }
    }

    pub fn decode(&self) -> Result<Vec<([f32; 3], [u8; 3])>, String> {
        let xyz = B64.decode(&self.xyz).map_err(|e| e.to_string())?;
        let rgb = B64.decode(&self.rgb).map_err(|e| e.to_string())?;
        if xyz.len() != self.count * 12 || rgb.len() != self.count * 3 {
            return Err(format!("payload sizes do not match count {}", self.count));
        }
        Ok(xyz
            .chunks_exact(12)
            .zip(rgb.chunks_exact(3))
            .map(|(p, c)| {
                let f = |i: usize| f32::from_le_bytes(p[4 * i..4 * i + 4].try_into().unwrap());
                ([f(0), f(1), f(2)], [c[0], c[1], c[2]])
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewPayload {
    pub session_id: String,
    pub dataset_id: String,
    pub hand_id: String,
    pub frame: usize,
    pub frame_count: usize,
    pub offset: Offset,
    pub converged: bool,
    pub rms: f64,
    pub fingertip_names: Vec<String>,
    pub residual: Vec<f64>,
    pub fingertip_targets: Vec<[f64; 3]>,
    pub robot_fingertips: Vec<[f64; 3]>,
    pub q: Vec<f64>,
    pub iters_used: usize,
    pub dirty: bool,
    pub config: IkConfig,
    pub scene: CloudPayload,
    pub hand: CloudPayload,
}

type CacheKey = (usize, [u64; 6]);

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    model: HandModel,
    recording: Recording,
    scenes: Vec<Option<PointCloud>>,
    cursor: usize,
    offset: Offset,
    last: RetargetResult,
    cfg: IkConfig,
    dirty: bool,
    caps: RenderCaps,
    /// Solutions per (frame, slider bits), so revisiting a state shows the same result.
    cache: HashMap<CacheKey, RetargetResult>,
    initial_offset: Offset,
    log: Vec<SessionCall>,
}

impl Session {
    /// Open over an in-memory recording and solve frame 0 from mid-range.
    pub fn new(
        id: impl Into<String>,
        model: HandModel,
        recording: Recording,
        scenes: Vec<Option<PointCloud>>,
        initial_offset: Option<Offset>,
        cfg: IkConfig,
    ) -> Result<Self, SessionError> {
        recording.validate(&model).map_err(|message| SessionError::Recording {
            path: recording.dataset_id.clone(),
            message,
        })?;
        if scenes.len() != recording.frames.len() {
            return Err(SessionError::Recording {
                path: recording.dataset_id.clone(),
                message: format!("{} scene slots for {} frames", scenes.len(), recording.frames.len()),
            });
        }
        cfg.validate(&model)?;
        let offset = normalize_offset(initial_offset.unwrap_or([0.0; 6]))?;
        let profile = CalibrationProfile {
            offset: offset_pose(&offset),
            ..CalibrationProfile::identity(&recording.dataset_id, &model.name)
        };
        let first = retarget_frame(&model, &recording.frames[0].target(), &profile, None, &cfg)?;
        let mut cache = HashMap::new();
        cache.insert((0, offset.map(f64::to_bits)), first.clone());
        Ok(Self {
            id: id.into(),
            model,
            recording,
            scenes,
            cursor: 0,
            offset,
            last: first,
            cfg,
            dirty: false,
            caps: RenderCaps::default(),
            cache,
            initial_offset: offset,
            log: Vec::new(),
        })
    }

    /// Load a recording (with scene clouds), a hand model and optionally a profile.
    pub fn open(
        id: impl Into<String>,
        recording_path: impl AsRef<Path>,
        hand_path: impl AsRef<Path>,
        profile_path: Option<&Path>,
        cfg: IkConfig,
    ) -> Result<Self, SessionError> {
        let model = load_hand_model(hand_path)?;
        let recording_path = recording_path.as_ref();
        let recording = Recording::load(recording_path)?;
        let base = recording_path.parent().unwrap_or(Path::new("."));
        let scenes = recording.load_scenes(base)?;
        let offset = match profile_path {
            Some(p) => Some(load_profile_offset(p)?.1),
            None => None,
        };
        Self::new(id, model, recording, scenes, offset, cfg)
    }

    /// Rebuild a session by applying `calls` in order. Calls that failed originally
    /// fail again the same way and are skipped.
    pub fn replay(
        id: impl Into<String>,
        model: HandModel,
        recording: Recording,
        scenes: Vec<Option<PointCloud>>,
        initial_offset: Option<Offset>,
        cfg: IkConfig,
        calls: &[SessionCall],
    ) -> Result<Self, SessionError> {
        let mut s = Self::new(id, model, recording, scenes, initial_offset, cfg)?;
        for c in calls {
            let _ = s.apply(c.clone());
        }
        Ok(s)
    }

    pub fn apply(&mut self, call: SessionCall) -> Result<(), SessionError> {
        match call {
            SessionCall::SetOffset { offset } => self.set_offset(offset).map(|_| ()),
            SessionCall::StepFrame { delta } => self.step_frame(delta).map(|_| ()),
            SessionCall::Seek { frame } => self.seek(frame).map(|_| ()),
            SessionCall::SolveAll => self.solve_all().map(|_| ()),
            SessionCall::SetConfig { config } => self.set_config(config).map(|_| ()),
        }
    }

    pub fn model(&self) -> &HandModel {
        &self.model
    }

    pub fn recording(&self) -> &Recording {
        &self.recording
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn frame_count(&self) -> usize {
        self.recording.frames.len()
    }

    pub fn offset(&self) -> Offset {
        self.offset
    }

    pub fn initial_offset(&self) -> Offset {
        self.initial_offset
    }

    pub fn last(&self) -> &RetargetResult {
        &self.last
    }

    pub fn config(&self) -> &IkConfig {
        &self.cfg
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn log(&self) -> &[SessionCall] {
        &self.log
    }

    pub fn set_caps(&mut self, caps: RenderCaps) {
        self.caps = caps;
    }

    pub fn profile(&self) -> CalibrationProfile {
        CalibrationProfile {
            offset: offset_pose(&self.offset),
            ..CalibrationProfile::identity(&self.recording.dataset_id, &self.model.name)
        }
    }

    /// Solve the cursor frame at the current offset, warm-started from the displayed q.
    fn resolve(&mut self) -> Result<&RetargetResult, SessionError> {
        let key = (self.cursor, self.offset.map(f64::to_bits));
        if let Some(hit) = self.cache.get(&key) {
            self.last = hit.clone();
            return Ok(&self.last);
        }
        let target = self.recording.frames[self.cursor].target();
        let r = retarget_frame(&self.model, &target, &self.profile(), Some(&self.last.q), &self.cfg)?;
        self.cache.insert(key, r.clone());
        self.last = r;
        Ok(&self.last)
    }

    /// Move the sliders and re-solve. On a solver error the new offset is kept and the
    /// previous solution stays displayed.
    pub fn set_offset(&mut self, offset: Offset) -> Result<&RetargetResult, SessionError> {
        let offset = normalize_offset(offset)?;
        self.log.push(SessionCall::SetOffset { offset });
        if offset != self.offset {
            self.dirty = true;
        }
        self.offset = offset;
        self.resolve()
    }

    /// Move the cursor by `delta`, clamped to the recording.
    pub fn step_frame(&mut self, delta: i64) -> Result<&RetargetResult, SessionError> {
        self.log.push(SessionCall::StepFrame { delta });
        let last = self.frame_count() as i64 - 1;
        self.cursor = (self.cursor as i64).saturating_add(delta).clamp(0, last) as usize;
        self.resolve()
    }

    pub fn seek(&mut self, frame: usize) -> Result<&RetargetResult, SessionError> {
        self.log.push(SessionCall::Seek { frame });
        self.cursor = frame.min(self.frame_count() - 1);
        self.resolve()
    }

    pub fn set_config(&mut self, cfg: IkConfig) -> Result<&RetargetResult, SessionError> {
        cfg.validate(&self.model)?;
        self.log.push(SessionCall::SetConfig { config: cfg.clone() });
        self.cfg = cfg;
        self.cache.clear();
        self.resolve()
    }

    /// Retarget the whole recording with the current offset. Per-frame results replace
    /// cached ones, so stepping afterwards shows the trajectory solution.
    pub fn solve_all(&mut self) -> Result<SolveAllSummary, SessionError> {
        self.log.push(SessionCall::SolveAll);
        let out = retarget_trajectory(&self.model, &self.recording.targets(), &self.profile(), &self.cfg)?;
        let bits = self.offset.map(f64::to_bits);
        for (t, r) in out.results.iter().enumerate() {
            self.cache.insert((t, bits), r.clone());
        }
        self.last = out.results[self.cursor].clone();
        let rms: Vec<f64> = out.results.iter().map(|r| r.rms).collect();
        Ok(SolveAllSummary {
            frames: rms.len(),
            convergence_rate: out.convergence_rate,
            flagged: out.flagged,
            mean_rms: rms.iter().sum::<f64>() / rms.len() as f64,
            max_rms: rms.iter().copied().fold(0.0, f64::max),
            rms,
        })
    }

    /// Write `<store>/<dataset>__<hand>.profile.json` with the exact slider values.
    /// On failure the session is untouched.
    pub fn save_profile(&mut self, store: impl AsRef<Path>) -> Result<(CalibrationProfile, PathBuf), SessionError> {
        let profile = self.profile();
        let path = store.as_ref().join(profile.file_name());
        let doc = ProfileDoc {
            dataset_id: profile.dataset_id.clone(),
            hand_id: profile.hand_id.clone(),
            offset: XyzRpy {
                xyz: [self.offset[0], self.offset[1], self.offset[2]],
                rpy: [self.offset[3], self.offset[4], self.offset[5]],
            },
            notes: profile.notes.clone(),
        };
        let text = serde_json::to_string_pretty(&doc).expect("profiles serialize") + "\n";
        std::fs::write(&path, text).map_err(|source| SessionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.dirty = false;
        Ok((profile, path))
    }

    pub fn render_state(&self) -> Result<ViewPayload, SessionError> {
        let frame = &self.recording.frames[self.cursor];
        let offset = offset_pose(&self.offset);
        let fk = forward_kinematics(&self.model, &self.last.q, &frame.hand_pose, &offset);
        let mut hand = sample_hand_surface(
            &self.model,
            &self.last.q,
            &frame.hand_pose,
            &offset,
            self.caps.hand_density,
            false,
        )?;
        if hand.len() > self.caps.hand_points {
            hand = if self.caps.hand_points == 0 {
                PointCloud::default()
            } else {
                downsample_fps(&hand, self.caps.hand_points, 0)?
            };
        }
        let scene = match &self.scenes[self.cursor] {
            Some(_) if self.caps.scene_points == 0 => PointCloud::default(),
            Some(c) if c.len() > self.caps.scene_points => downsample_fps(c, self.caps.scene_points, 0)?,
            Some(c) => c.clone(),
            None => PointCloud::default(),
        };
        let xyz = |v: &Vector3<f64>| [v.x, v.y, v.z];
        Ok(ViewPayload {
            session_id: self.id.clone(),
            dataset_id: self.recording.dataset_id.clone(),
            hand_id: self.model.name.clone(),
            frame: self.cursor,
            frame_count: self.frame_count(),
            offset: self.offset,
            converged: self.last.converged,
            rms: self.last.rms,
            fingertip_names: self
                .model
                .fingertip_links
                .iter()
                .map(|&l| self.model.links[l].name.clone())
                .collect(),
            residual: self.last.residual.clone(),
            fingertip_targets: frame.fingertips.clone(),
            robot_fingertips: fk.fingertips.positions.iter().map(xyz).collect(),
            q: self.last.q.0.clone(),
            iters_used: self.last.iters_used,
            dirty: self.dirty,
            config: self.cfg.clone(),
            scene: CloudPayload::encode(&scene),
            hand: CloudPayload::encode(&hand),
        })
    }
}
