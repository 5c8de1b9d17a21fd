//! Trajectory storage, ingestion of retargeted output, motion downsampling, chunk
//! targets, validity filtering, and the human/robot co-training batch mixer.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::faas::{encode_state, relative_chunk, ActionChunk, FaasError, FaasVector, FAAS_RECORD_BYTES};
use crate::handmodel::{HandModel, Side};
use crate::kinematics::JointState;
use crate::pointcloud::{PointCloud, PointCloudError};
use crate::pose::Pose;
use crate::retarget::TrajectoryRetarget;

pub const SHARD_VERSION: u32 = 1;
const ACTIONS_MAGIC: &[u8; 8] = b"DXACTS01";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("trajectory '{0}' has no frames")]
    EmptyTrajectory(String),
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("corrupt shard {path}: {reason}")]
    CorruptShard { path: String, reason: String },
    #[error("shard {path} has version {found}, expected {expected}")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Faas(#[from] FaasError),
    #[error(transparent)]
    Cloud(#[from] PointCloudError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Robot,
}

/// Which human frame the tracked hand poses (and so the dummy base) refer to.
/// Capture pipelines differ; a dataset has to say which one it used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFrame {
    #[default]
    Wrist,
    Palm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: usize,
    /// SHA-256 (hex) of the stored cloud's bytes.
    pub cloud_ref: String,
    pub instruction: String,
    /// Absolute-wrist state.
    pub proprio: FaasVector,
    /// Row of this frame's action in [`Trajectory::actions`].
    pub action_chunk_ref: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub hand_id: String,
    pub side: Side,
    pub source: Source,
    pub pose_frame: PoseFrame,
    pub fps: f64,
    pub frames: Vec<Frame>,
    pub actions: Vec<FaasVector>,
    pub valid: bool,
    /// `[start, end)` frame indices into the parent recording.
    pub segmentation: (usize, usize),
    /// Per-frame retarget convergence; all `true` for robot data.
    pub converged: Vec<bool>,
    /// Content-addressed pointclouds referenced by the frames.
    pub clouds: BTreeMap<String, PointCloud>,
}

pub fn cloud_address(cloud: &PointCloud) -> String {
    hex::encode(Sha256::digest(cloud.to_bytes()))
}

fn is_f32_exact(v: &FaasVector) -> bool {
    v.values.iter().all(|x| (*x as f32) as f64 == *x)
}

impl Trajectory {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Invalid(format!("{}: {m}", self.id)));
        if self.frames.is_empty() {
            return Err(DatasetError::EmptyTrajectory(self.id.clone()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps {} must be > 0", self.fps));
        }
        if self.actions.len() != self.frames.len() {
            return bad(format!(
                "{} actions for {} frames",
                self.actions.len(),
                self.frames.len()
            ));
        }
        if self.converged.len() != self.frames.len() {
            return bad("convergence flags do not cover every frame".into());
        }
        let mask = self.frames[0].proprio.mask;
        for (i, f) in self.frames.iter().enumerate() {
            if i > 0 && f.t <= self.frames[i - 1].t {
                return bad(format!("frame index {} not increasing", f.t));
            }
            if !self.clouds.contains_key(&f.cloud_ref) {
                return bad(format!("frame {} cloud {} does not resolve", f.t, f.cloud_ref));
            }
            if f.proprio.mask != mask {
                return bad(format!("frame {} proprio mask differs from frame 0", f.t));
            }
            if f.action_chunk_ref >= self.actions.len() {
                return bad(format!("frame {} action ref out of range", f.t));
            }
            if !is_f32_exact(&f.proprio) {
                return bad(format!("frame {} proprio is not f32-quantized", f.t));
            }
        }
        if let Some(i) = self.actions.iter().position(|a| !is_f32_exact(a)) {
            return bad(format!("action {i} is not f32-quantized"));
        }
        for (k, c) in &self.clouds {
            if cloud_address(c) != *k {
                return bad(format!("cloud key {k} does not match its content"));
            }
        }
        Ok(())
    }

    pub fn convergence_rate(&self) -> f64 {
        if self.converged.is_empty() {
            return 1.0;
        }
        self.converged.iter().filter(|c| **c).count() as f64 / self.converged.len() as f64
    }

    pub fn stats(&self) -> TrajectoryStats {
        TrajectoryStats {
            id: self.id.clone(),
            hand_id: self.hand_id.clone(),
            source: self.source,
            frames: self.frames.len(),
            fps: self.fps,
            duration_s: self.frames.len() as f64 / self.fps,
            convergence_rate: self.convergence_rate(),
            populated_dims: self.frames.first().map_or(0, |f| f.proprio.mask.count()),
            unique_clouds: self.clouds.len(),
            cloud_points: self.clouds.values().map(|c| c.len()).sum(),
            valid: self.valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub id: String,
    pub hand_id: String,
    pub source: Source,
    pub frames: usize,
    pub fps: f64,
    pub duration_s: f64,
    pub convergence_rate: f64,
    pub populated_dims: usize,
    pub unique_clouds: usize,
    pub cloud_points: usize,
    pub valid: bool,
}

/// Inputs for building a trajectory from a retargeted recording.
pub struct Ingest<'a> {
    pub id: &'a str,
    pub model: &'a HandModel,
    pub side: Side,
    pub source: Source,
    pub pose_frame: PoseFrame,
    pub fps: f64,
    pub instruction: &'a str,
    /// Wrist pose per frame (the dummy-base pose the retargeted hand is mounted at).
    pub wrists: &'a [Pose],
    pub retargeted: &'a TrajectoryRetarget,
    /// One cloud per frame; identical clouds are stored once.
    pub clouds: Vec<PointCloud>,
    pub segmentation: Option<(usize, usize)>,
}

/// Proprio is the encoded, f32-quantized state of each frame; the action of frame `t`
/// is the state of frame `t+1`, and the last frame repeats its own state.
pub fn ingest(input: Ingest<'_>) -> Result<Trajectory, DatasetError> {
    let n = input.retargeted.results.len();
    if n == 0 {
        return Err(DatasetError::EmptyTrajectory(input.id.into()));
    }
    if input.wrists.len() != n || input.clouds.len() != n {
        return Err(DatasetError::Invalid(format!(
            "{}: {} results, {} wrists, {} clouds",
            input.id,
            n,
            input.wrists.len(),
            input.clouds.len()
        )));
    }
    let states: Vec<FaasVector> = input
        .retargeted
        .results
        .iter()
        .zip(input.wrists)
        .map(|(r, w)| encode_state(input.model, input.side, w, &r.q).map(|v| v.quantized()))
        .collect::<Result<_, _>>()?;
    let mut clouds = BTreeMap::new();
    let mut frames = Vec::with_capacity(n);
    for (t, (cloud, proprio)) in input.clouds.into_iter().zip(&states).enumerate() {
        let key = cloud_address(&cloud);
        clouds.entry(key.clone()).or_insert(cloud);
        frames.push(Frame {
            t,
            cloud_ref: key,
            instruction: input.instruction.to_string(),
            proprio: *proprio,
            action_chunk_ref: t,
        });
    }
    let actions = next_state_actions(&states);
    let traj = Trajectory {
        id: input.id.into(),
        hand_id: input.model.name.clone(),
        side: input.side,
        source: input.source,
        pose_frame: input.pose_frame,
        fps: input.fps,
        frames,
        actions,
        valid: input.retargeted.flagged.is_empty(),
        segmentation: input.segmentation.unwrap_or((0, n)),
        converged: input.retargeted.results.iter().map(|r| r.converged).collect(),
        clouds,
    };
    traj.validate()?;
    Ok(traj)
}

fn next_state_actions(states: &[FaasVector]) -> Vec<FaasVector> {
    (0..states.len())
        .map(|t| states[(t + 1).min(states.len() - 1)])
        .collect()
}

/// Encode one state per frame without retargeting, for robot-side data.
pub fn states_from_joints(
    model: &HandModel,
    side: Side,
    wrists: &[Pose],
    qs: &[JointState],
) -> Result<Vec<FaasVector>, DatasetError> {
    wrists
        .iter()
        .zip(qs)
        .map(|(w, q)| Ok(encode_state(model, side, w, q)?.quantized()))
        .collect()
}

// ---------------------------------------------------------------------------
// Shards

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFrame {
    t: usize,
    cloud_ref: String,
    instruction: String,
    action_chunk_ref: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShardIndex {
    version: u32,
    id: String,
    hand_id: String,
    side: Side,
    source: Source,
    #[serde(default)]
    pose_frame: PoseFrame,
    fps: f64,
    valid: bool,
    segmentation: (usize, usize),
    converged: Vec<bool>,
    frames: Vec<IndexFrame>,
    actions_sha256: String,
    clouds: BTreeMap<String, usize>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::CorruptShard {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Write a shard directory: `index.json`, `actions.bin` (action table, then proprio
/// table, as FAAS records) and `clouds/<sha256>.bin`.
pub fn write_trajectory(traj: &Trajectory, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    traj.validate()?;
    let dir = dir.as_ref();
    let clouds_dir = dir.join("clouds");
    std::fs::create_dir_all(&clouds_dir).map_err(io(&clouds_dir))?;

    let mut actions = Vec::with_capacity(16 + 2 * traj.frames.len() * FAAS_RECORD_BYTES);
    actions.extend_from_slice(ACTIONS_MAGIC);
    actions.extend_from_slice(&(traj.frames.len() as u64).to_le_bytes());
    for a in &traj.actions {
        actions.extend_from_slice(&a.to_bytes());
    }
    for f in &traj.frames {
        actions.extend_from_slice(&f.proprio.to_bytes());
    }
    let ap = dir.join("actions.bin");
    std::fs::write(&ap, &actions).map_err(io(&ap))?;

    let mut cloud_sizes = BTreeMap::new();
    for (k, c) in &traj.clouds {
        let bytes = c.to_bytes();
        let p = clouds_dir.join(format!("{k}.bin"));
        std::fs::write(&p, &bytes).map_err(io(&p))?;
        cloud_sizes.insert(k.clone(), bytes.len());
    }

    let index = ShardIndex {
        version: SHARD_VERSION,
        id: traj.id.clone(),
        hand_id: traj.hand_id.clone(),
        side: traj.side,
        source: traj.source,
        pose_frame: traj.pose_frame,
        fps: traj.fps,
        valid: traj.valid,
        segmentation: traj.segmentation,
        converged: traj.converged.clone(),
        frames: traj
            .frames
            .iter()
            .map(|f| IndexFrame {
                t: f.t,
                cloud_ref: f.cloud_ref.clone(),
                instruction: f.instruction.clone(),
                action_chunk_ref: f.action_chunk_ref,
            })
            .collect(),
        actions_sha256: hex::encode(Sha256::digest(&actions)),
        clouds: cloud_sizes,
    };
    let ip = dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
    std::fs::write(&ip, text).map_err(io(&ip))
}

pub fn read_trajectory(dir: impl AsRef<Path>) -> Result<Trajectory, DatasetError> {
    let dir = dir.as_ref();
    let ip = dir.join("index.json");
    let text = std::fs::read_to_string(&ip).map_err(io(&ip))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| corrupt(&ip, format!("index: {e}")))?;
    if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
        if v != SHARD_VERSION as u64 {
            return Err(DatasetError::VersionMismatch {
                path: ip.display().to_string(),
                found: v as u32,
                expected: SHARD_VERSION,
            });
        }
    }
    let index: ShardIndex =
        serde_json::from_value(raw).map_err(|e| corrupt(&ip, format!("index: {e}")))?;

    let ap = dir.join("actions.bin");
    let actions = std::fs::read(&ap).map_err(io(&ap))?;
    if hex::encode(Sha256::digest(&actions)) != index.actions_sha256 {
        return Err(corrupt(&ap, "checksum mismatch"));
    }
    let n = index.frames.len();
    if actions.len() != 16 + 2 * n * FAAS_RECORD_BYTES
        || &actions[..8] != ACTIONS_MAGIC
        || u64::from_le_bytes(actions[8..16].try_into().unwrap()) != n as u64
    {
        return Err(corrupt(&ap, "layout does not match the index"));
    }
    let records: Vec<FaasVector> = actions[16..]
        .chunks_exact(FAAS_RECORD_BYTES)
        .map(FaasVector::from_bytes)
        .collect::<Result<_, _>>()
        .map_err(|e| corrupt(&ap, e.to_string()))?;
    let (acts, props) = records.split_at(n);

    let mut clouds = BTreeMap::new();
    for (k, size) in &index.clouds {
        let p = dir.join("clouds").join(format!("{k}.bin"));
        let bytes = std::fs::read(&p).map_err(io(&p))?;
        if bytes.len() != *size || hex::encode(Sha256::digest(&bytes)) != *k {
            return Err(corrupt(&p, "content does not match its address"));
        }
        let c = PointCloud::from_bytes(&bytes).map_err(|e| corrupt(&p, e.to_string()))?;
        clouds.insert(k.clone(), c);
    }

    let traj = Trajectory {
        id: index.id,
        hand_id: index.hand_id,
        side: index.side,
        source: index.source,
        pose_frame: index.pose_frame,
        fps: index.fps,
        frames: index
            .frames
            .into_iter()
            .zip(props)
            .map(|(f, p)| Frame {
                t: f.t,
                cloud_ref: f.cloud_ref,
                instruction: f.instruction,
                proprio: *p,
                action_chunk_ref: f.action_chunk_ref,
            })
            .collect(),
        actions: acts.to_vec(),
        valid: index.valid,
        segmentation: index.segmentation,
        converged: index.converged,
        clouds,
    };
    traj.validate().map_err(|e| corrupt(dir, e.to_string()))?;
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Downsampling and chunks

/// Frame indices kept when resampling `n` frames from `fps` to `target_fps`:
/// `round(k · fps/target_fps)` for every k that stays in range.
pub fn stride_indices(n: usize, fps: f64, target_fps: f64) -> Result<Vec<usize>, DatasetError> {
    if !(target_fps > 0.0 && target_fps.is_finite()) || target_fps > fps {
        return Err(DatasetError::InvalidRate(format!(
            "target {target_fps} fps must lie in (0, {fps}]"
        )));
    }
    let stride = fps / target_fps;
    Ok((0..)
        .map(|k| (k as f64 * stride).round() as usize)
        .take_while(|&i| i < n)
        .collect())
}

/// Keep a uniform stride of frames. Frames are renumbered from 0 and clouds no longer
/// referenced are dropped. Human actions are rebuilt as the next kept frame's state;
/// robot actions are subselected.
pub fn downsample_motion(traj: &Trajectory, target_fps: f64) -> Result<Trajectory, DatasetError> {
    traj.validate()?;
    let idx = stride_indices(traj.frames.len(), traj.fps, target_fps)?;
    let frames: Vec<Frame> = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| Frame {
            t: k,
            action_chunk_ref: k,
            ..traj.frames[i].clone()
        })
        .collect();
    let actions = match traj.source {
        Source::Human => next_state_actions(&frames.iter().map(|f| f.proprio).collect::<Vec<_>>()),
        Source::Robot => idx.iter().map(|&i| traj.actions[traj.frames[i].action_chunk_ref]).collect(),
    };
    let clouds = traj
        .clouds
        .iter()
        .filter(|(k, _)| frames.iter().any(|f| &f.cloud_ref == *k))
        .map(|(k, c)| (k.clone(), c.clone()))
        .collect();
    Ok(Trajectory {
        fps: target_fps,
        frames,
        actions,
        converged: idx.iter().map(|&i| traj.converged[i]).collect(),
        clouds,
        ..traj.clone()
    })
}

/// Training target for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkTarget {
    pub t: usize,
    pub chunk: ActionChunk,
    /// `true` where the entry repeats the last action past the end of the trajectory.
    pub pad: Vec<bool>,
}

/// For each frame `t`, actions `t..t+H−1` with relative wrists; entries past the end
/// repeat the last action and are flagged in `pad`.
pub fn build_chunks(traj: &Trajectory, horizon: usize) -> Result<Vec<ChunkTarget>, DatasetError> {
    if horizon == 0 {
        return Err(DatasetError::InvalidArgument("horizon must be ≥ 1".into()));
    }
    traj.validate()?;
    let last = traj.actions.len() - 1;
    traj.frames
        .iter()
        .map(|f| {
            let start = f.action_chunk_ref;
            let abs: Vec<FaasVector> = (0..horizon)
                .map(|k| traj.actions[(start + k).min(last)])
                .collect();
            Ok(ChunkTarget {
                t: f.t,
                chunk: relative_chunk(&abs)?,
                pad: (0..horizon).map(|k| start + k > last).collect(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Filtering

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Minimum fraction of converged frames, in [0, 1].
    pub min_convergence: f64,
    pub min_frames: usize,
    /// Drop trajectories already marked invalid.
    pub require_valid_flag: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_convergence: 1.0,
            min_frames: 1,
            require_valid_flag: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dropped {
    pub id: String,
    pub reasons: Vec<String>,
}

fn pct(x: f64) -> String {
    let p = x * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round())
    } else {
        format!("{p:.1}%")
    }
}

pub fn filter_invalid(trajs: Vec<Trajectory>, cfg: &FilterConfig) -> (Vec<Trajectory>, Vec<Dropped>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for t in trajs {
        let mut reasons = Vec::new();
        let rate = t.convergence_rate();
        if rate < cfg.min_convergence {
            reasons.push(format!("convergence {} < {}", pct(rate), pct(cfg.min_convergence)));
        }
        if t.frames.len() < cfg.min_frames {
            reasons.push(format!("length {} < {}", t.frames.len(), cfg.min_frames));
        }
        if cfg.require_valid_flag && !t.valid {
            reasons.push("marked invalid".into());
        }
        if reasons.is_empty() {
            kept.push(t);
        } else {
            dropped.push(Dropped { id: t.id, reasons });
        }
    }
    (kept, dropped)
}

// ---------------------------------------------------------------------------
// Co-training mixer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    /// Human items used (the first `human_count` of the human set).
    pub human_count: usize,
    pub robot_count: usize,
    /// Per-item sampling weights.
    #[serde(default = "one")]
    pub human_weight: f64,
    #[serde(default = "one")]
    pub robot_weight: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl MixSpec {
    /// Probability that a batch slot draws a human item.
    pub fn human_fraction(&self) -> f64 {
        let h = self.human_count as f64 * self.human_weight;
        let r = self.robot_count as f64 * self.robot_weight;
        h / (h + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchItem {
    pub source: Source,
    pub index: usize,
}

/// Source of one slot's draw: shuffled without replacement, reshuffled when spent.
#[derive(Debug, Clone)]
struct Pool {
    order: Vec<usize>,
    next: usize,
    epochs: usize,
}

impl Pool {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            next: n,
            epochs: 0,
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.next == self.order.len() {
            self.order.shuffle(rng);
            self.next = 0;
            self.epochs += 1;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

/// Reproducible, endless stream of batches. Each slot picks the human source with
/// probability `h·w_h / (h·w_h + r·w_r)` and takes that source's next item from a
/// per-source shuffle, so items are drawn without replacement within a pass.
#[derive(Debug, Clone)]
pub struct BatchStream {
    spec: MixSpec,
    batch_size: usize,
    rng: ChaCha8Rng,
    human: Pool,
    robot: Pool,
    /// Items drawn per source since the stream started.
    pub histogram: [usize; 2],
    epoch_hist: [usize; 2],
    /// Source counts of each completed epoch of `h + r` items.
    pub epoch_histograms: Vec<[usize; 2]>,
}

impl Iterator for BatchStream {
    type Item = Vec<BatchItem>;

    fn next(&mut self) -> Option<Vec<BatchItem>> {
        let p = self.spec.human_fraction();
        let epoch_len = self.spec.human_count + self.spec.robot_count;
        let batch = (0..self.batch_size)
            .map(|_| {
                let human = self.rng.random_bool(p.clamp(0.0, 1.0));
                let item = if human {
                    BatchItem {
                        source: Source::Human,
                        index: self.human.draw(&mut self.rng),
                    }
                } else {
                    BatchItem {
                        source: Source::Robot,
                        index: self.robot.draw(&mut self.rng),
                    }
                };
                let s = human as usize ^ 1;
                self.histogram[s] += 1;
                self.epoch_hist[s] += 1;
                if self.epoch_hist[0] + self.epoch_hist[1] == epoch_len {
                    self.epoch_histograms.push(self.epoch_hist);
                    self.epoch_hist = [0, 0];
                }
                item
            })
            .collect();
        Some(batch)
    }
}

pub fn mix_batches(
    human_len: usize,
    robot_len: usize,
    spec: &MixSpec,
    batch_size: usize,
) -> Result<BatchStream, DatasetError> {
    if spec.human_count + spec.robot_count == 0 {
        return Err(DatasetError::InsufficientData("h + r must be ≥ 1".into()));
    }
    if human_len < spec.human_count || robot_len < spec.robot_count {
        return Err(DatasetError::InsufficientData(format!(
            "spec asks for {} human / {} robot items, sets hold {human_len} / {robot_len}",
            spec.human_count, spec.robot_count
        )));
    }
    if batch_size == 0 {
        return Err(DatasetError::InvalidArgument("batch_size must be ≥ 1".into()));
    }
    let ok = |w: f64| w >= 0.0 && w.is_finite();
    if !ok(spec.human_weight) || !ok(spec.robot_weight) || !(spec.human_fraction() >= 0.0) {
        return Err(DatasetError::InvalidArgument("weights must be ≥ 0 with a positive total".into()));
    }
    Ok(BatchStream {
        spec: spec.clone(),
        batch_size,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        human: Pool::new(spec.human_count),
        robot: Pool::new(spec.robot_count),
        histogram: [0, 0],
        epoch_hist: [0, 0],
        epoch_histograms: Vec::new(),
    })
}
