//! `dexforge`: command-line front end over the core library and the calibration service.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dexforge_core::dataset::{
    self, filter_invalid, ingest, mix_batches, read_trajectory, write_trajectory, FilterConfig, Ingest, MixSpec,
};
use dexforge_core::faas::{self, FaasJson, FaasVector, FAAS_RECORD_BYTES};
use dexforge_core::flowmatch::{self, euler_sample, evaluate, toy, LossKind, Mlp, TrainConfig};
use dexforge_core::handmodel::load_hand_model;
use dexforge_core::pointcloud::{self, PointCloud};
use dexforge_core::retarget::{retarget_trajectory, CalibrationProfile, IkConfig, RetargetResult};
use dexforge_core::session::{load_profile_offset, offset_pose, Recording};
use dexforge_core::{HandModel, JointState, Pose, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "dexforge", version, about = "Human hand motion to robot dexterous-hand data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the local calibration service for the GUI.
    Serve {
        #[arg(long, default_value_t = 8642)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Calibration store used when a save request names none.
        #[arg(long, default_value = "profiles")]
        profiles: PathBuf,
    },
    /// Retarget a recording onto a hand and write per-frame joint solutions.
    Retarget(RetargetArgs),
    /// Encode, decode and transfer hand states through the 82-dim action space.
    #[command(subcommand)]
    Faas(FaasCmd),
    /// Train the flow-matching MLP on the synthetic reaching task.
    TrainToy(TrainToyArgs),
    #[command(subcommand)]
    Pointcloud(PointcloudCmd),
    #[command(subcommand)]
    Dataset(DatasetCmd),
}

#[derive(Args)]
struct RetargetArgs {
    #[arg(long)]
    hand: PathBuf,
    #[arg(long)]
    recording: PathBuf,
    /// Calibration profile; identity offset when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Solver settings as JSON (any subset of the fields).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Left,
    Right,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Left => Side::Left,
            SideArg::Right => Side::Right,
        }
    }
}

#[derive(Subcommand)]
enum FaasCmd {
    /// Hand state JSON to an action vector (`.bin` output writes the binary record).
    Encode {
        #[arg(long)]
        hand: PathBuf,
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Action vector (JSON or binary record) back to a hand state.
    Decode {
        #[arg(long)]
        hand: PathBuf,
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-express one hand's state on another hand through the shared slots.
    Transfer {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        to: PathBuf,
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    /// Use the literal (unsquared) norm instead of the squared loss.
    #[arg(long)]
    norm_loss: bool,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch loss curve as CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PointcloudCmd {
    /// RGB-D frame (PPM color, 16-bit PGM depth, intrinsics JSON) to a point cloud.
    Unproject {
        #[arg(long)]
        color: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Hand mask (PGM); masked pixels are dropped.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write an ASCII PLY next to the cloud.
        #[arg(long)]
        ply: Option<PathBuf>,
    },
    /// Render a cloud back into a color + depth image pair.
    Reproject {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        color: PathBuf,
        #[arg(long)]
        depth: PathBuf,
    },
    /// Add robot-hand surface samples at a given state to a scene cloud.
    Attach {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        hand: PathBuf,
        /// `{ "wrist": {xyz, rpy}, "q": [...] }`
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Surface samples per square meter.
        #[arg(long, default_value_t = 2e5)]
        density: f64,
        /// Farthest-point cap on the hand samples.
        #[arg(long)]
        hand_points: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Human,
    Robot,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Retarget a recording and write it as a trajectory shard.
    Pack {
        #[arg(long)]
        hand: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "right")]
        side: SideArg,
        #[arg(long, value_enum, default_value = "human")]
        source: SourceArg,
        #[arg(long, default_value = "")]
        instruction: String,
        /// Trajectory id; defaults to the recording's dataset id.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summaries of one or more shards, with the invalid-segment filter applied.
    Stats {
        shards: Vec<PathBuf>,
        /// Minimum fraction of converged frames to keep a trajectory.
        #[arg(long, default_value_t = 1.0)]
        min_convergence: f64,
        #[arg(long, default_value_t = 1)]
        min_frames: usize,
    },
    /// Draw batches from a human/robot mix and report the source histogram.
    MixPreview {
        #[arg(long)]
        human: usize,
        #[arg(long)]
        robot: usize,
        #[arg(long, default_value_t = 1.0)]
        human_weight: f64,
        #[arg(long, default_value_t = 1.0)]
        robot_weight: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 10)]
        batches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// On-disk hand state used by the `faas` and `pointcloud attach` commands.
#[derive(Serialize, Deserialize)]
struct StateFile {
    #[serde(default)]
    wrist: Pose,
    q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    defaulted: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    clamped: Vec<usize>,
}

impl StateFile {
    fn joint_state(&self, model: &HandModel) -> Result<JointState> {
        if self.q.len() != model.full_dof {
            bail!("state has {} joint values, hand `{}` has {}", self.q.len(), model.name, model.full_dof);
        }
        Ok(JointState(self.q.clone()))
    }
}

impl From<faas::DecodedState> for StateFile {
    fn from(d: faas::DecodedState) -> Self {
        Self {
            wrist: d.wrist,
            q: d.q.0,
            defaulted: d.defaulted,
            clamped: d.clamped,
        }
    }
}

#[derive(Serialize)]
struct RetargetFrameOut<'a> {
    t: usize,
    wrist: Pose,
    #[serde(flatten)]
    result: &'a RetargetResult,
}

#[derive(Serialize)]
struct RetargetOut<'a> {
    dataset_id: &'a str,
    hand_id: &'a str,
    offset: Pose,
    convergence_rate: f64,
    flagged: &'a [usize],
    frames: Vec<RetargetFrameOut<'a>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_hand(path: &Path) -> Result<HandModel> {
    load_hand_model(path).with_context(|| format!("loading hand {}", path.display()))
}

/// Profile with the exact slider offset when the file carries one.
fn load_profile(path: Option<&Path>, dataset_id: &str, hand_id: &str) -> Result<CalibrationProfile> {
    Ok(match path {
        Some(p) => {
            let (mut profile, offset) = load_profile_offset(p)?;
            profile.offset = offset_pose(&offset);
            profile
        }
        None => CalibrationProfile::identity(dataset_id, hand_id),
    })
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Serve { port, host, profiles } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(dexforge_service::serve(SocketAddr::new(host, port), profiles))?;
        }
        Cmd::Retarget(a) => retarget(a)?,
        Cmd::Faas(c) => faas_cmd(c)?,
        Cmd::TrainToy(a) => train_toy(a)?,
        Cmd::Pointcloud(c) => pointcloud_cmd(c)?,
        Cmd::Dataset(c) => dataset_cmd(c)?,
    }
    Ok(())
}

fn retarget(a: RetargetArgs) -> Result<()> {
    let model = load_hand(&a.hand)?;
    let rec = Recording::load(&a.recording)?;
    rec.validate(&model).map_err(|m| anyhow::anyhow!("{}: {m}", a.recording.display()))?;
    let profile = load_profile(a.profile.as_deref(), &rec.dataset_id, &model.name)?;
    let cfg: IkConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => IkConfig::default(),
    };
    let targets = rec.targets();
    let out = retarget_trajectory(&model, &targets, &profile, &cfg)?;
    let doc = RetargetOut {
        dataset_id: &rec.dataset_id,
        hand_id: &model.name,
        offset: profile.offset,
        convergence_rate: out.convergence_rate,
        flagged: &out.flagged,
        frames: out
            .results
            .iter()
            .zip(&targets)
            .enumerate()
            .map(|(t, (r, tg))| RetargetFrameOut {
                t,
                wrist: tg.hand_pose,
                result: r,
            })
            .collect(),
    };
    write_json(&a.out, &doc)?;
    println!(
        "{} frames, {:.1}% converged, {} flagged -> {}",
        targets.len(),
        100.0 * out.convergence_rate,
        out.flagged.len(),
        a.out.display()
    );
    Ok(())
}

fn read_vector(path: &Path) -> Result<FaasVector> {
    if is_binary(path) {
        let b = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        if b.len() != FAAS_RECORD_BYTES {
            bail!("{}: expected a {FAAS_RECORD_BYTES}-byte record, found {} bytes", path.display(), b.len());
        }
        Ok(FaasVector::from_bytes(&b)?)
    } else {
        Ok(FaasVector::try_from(read_json::<FaasJson>(path)?)?)
    }
}

fn write_vector(path: &Path, v: &FaasVector) -> Result<()> {
    if is_binary(path) {
        std::fs::write(path, v.to_bytes()).with_context(|| format!("writing {}", path.display()))
    } else {
        write_json(path, &FaasJson::from(v))
    }
}

fn faas_cmd(c: FaasCmd) -> Result<()> {
    match c {
        FaasCmd::Encode { hand, side, state, out } => {
            let model = load_hand(&hand)?;
            let s: StateFile = read_json(&state)?;
            let v = faas::encode_state(&model, side.into(), &s.wrist, &s.joint_state(&model)?)?;
            write_vector(&out, &v)?;
            println!("{} of {} slots populated -> {}", v.mask.count(), faas::FAAS_DIM, out.display());
        }
        FaasCmd::Decode { hand, side, input, out } => {
            let model = load_hand(&hand)?;
            let d = faas::decode_state(&read_vector(&input)?, &model, side.into())?;
            if !d.wrist_populated {
                eprintln!("warning: no wrist for this side, decoded as identity");
            }
            report_decoded(&d);
            write_json(&out, &StateFile::from(d))?;
        }
        FaasCmd::Transfer { from, to, side, state, out } => {
            let (src, dst) = (load_hand(&from)?, load_hand(&to)?);
            let s: StateFile = read_json(&state)?;
            let d = faas::transfer_state(&src, &dst, side.into(), &s.wrist, &s.joint_state(&src)?)?;
            report_decoded(&d);
            write_json(&out, &StateFile::from(d))?;
        }
    }
    Ok(())
}

fn report_decoded(d: &faas::DecodedState) {
    println!(
        "{} joints, {} defaulted to rest, {} clamped",
        d.q.len(),
        d.defaulted.len(),
        d.clamped.len()
    );
}

fn train_toy(a: TrainToyArgs) -> Result<()> {
    let h = toy::DEFAULT_HORIZON;
    let train_set = toy::dataset(a.samples, h, a.seed);
    let val = toy::dataset(a.samples.div_ceil(2).max(1), h, a.seed.wrapping_add(1));
    let mut net = Mlp::new(9 * h, 2, &a.hidden, a.seed.wrapping_add(2));
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed.wrapping_add(3),
        loss: if a.norm_loss { LossKind::Norm } else { LossKind::Squared },
        ..TrainConfig::default()
    };
    let before = evaluate(&net, &val, 99, cfg.loss)?;
    let report = flowmatch::train(&mut net, &train_set, &cfg)?;
    let after = evaluate(&net, &val, 99, cfg.loss)?;
    println!("validation loss {before:.4} -> {after:.4} ({:.1}% of initial)", 100.0 * after / before);
    println!("{} steps, {} clipped", report.steps, report.clipped_steps);

    // one sampled chunk against the ground truth for a fixed target
    let target = [0.5, -0.25];
    let truth = toy::reaching_chunk(target, h);
    let sample = euler_sample(&net, &target, cfg.delta, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let err = truth
        .iter()
        .zip(&sample)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    println!("sample for target {target:?}: ‖error‖ = {err:.4}");

    if let Some(p) = &a.loss_csv {
        std::fs::write(p, report.loss_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.out {
        flowmatch::save_checkpoint(&net, &cfg, p)?;
        println!("checkpoint -> {}", p.display());
    }
    Ok(())
}

fn pointcloud_cmd(c: PointcloudCmd) -> Result<()> {
    match c {
        PointcloudCmd::Unproject {
            color,
            depth,
            intrinsics,
            mask,
            out,
            ply,
        } => {
            let frame = pointcloud::load_frame(&color, &depth, &intrinsics)?;
            let mask = mask.map(pointcloud::load_mask).transpose()?;
            let cloud = pointcloud::unproject(&frame, mask.as_ref())?;
            pointcloud::save_cloud(&cloud, &out)?;
            if let Some(p) = ply {
                std::fs::write(&p, cloud.to_ply()).with_context(|| format!("writing {}", p.display()))?;
            }
            println!(
                "{} points from {} valid pixels -> {}",
                cloud.len(),
                frame.valid_pixels(),
                out.display()
            );
        }
        PointcloudCmd::Reproject {
            cloud,
            intrinsics,
            color,
            depth,
        } => {
            let cloud = pointcloud::load_cloud(&cloud)?;
            let intr = pointcloud::load_intrinsics(&intrinsics)?;
            let frame = pointcloud::reproject(&cloud, &intr)?;
            // intrinsics are rewritten next to the images so the triple reloads as a unit
            pointcloud::save_frame(&frame, &color, &depth, &intrinsics)?;
            println!("{} of {} pixels filled", frame.valid_pixels(), intr.pixel_count());
        }
        PointcloudCmd::Attach {
            scene,
            hand,
            state,
            profile,
            density,
            hand_points,
            seed,
            out,
        } => {
            let model = load_hand(&hand)?;
            let s: StateFile = read_json(&state)?;
            let offset = load_profile(profile.as_deref(), "", &model.name)?.offset;
            let mut samples =
                pointcloud::sample_hand_surface(&model, &s.joint_state(&model)?, &s.wrist, &offset, density, false)?;
            if let Some(n) = hand_points {
                samples = pointcloud::downsample_fps(&samples, n, seed)?;
            }
            let scene: PointCloud = pointcloud::load_cloud(&scene)?;
            let merged = pointcloud::compose_scene(&scene, &samples);
            pointcloud::save_cloud(&merged, &out)?;
            println!(
                "{} scene + {} hand points -> {}",
                scene.len(),
                samples.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn dataset_cmd(c: DatasetCmd) -> Result<()> {
    match c {
        DatasetCmd::Pack {
            hand,
            recording,
            profile,
            side,
            source,
            instruction,
            id,
            out,
        } => {
            let model = load_hand(&hand)?;
            let rec = Recording::load(&recording)?;
            rec.validate(&model).map_err(|m| anyhow::anyhow!("{}: {m}", recording.display()))?;
            let profile = load_profile(profile.as_deref(), &rec.dataset_id, &model.name)?;
            let targets = rec.targets();
            let retargeted = retarget_trajectory(&model, &targets, &profile, &IkConfig::default())?;
            // the state's wrist is where the hand base actually sits: tracked pose · offset
            let wrists: Vec<Pose> = targets.iter().map(|t| t.hand_pose * profile.offset).collect();
            let base = recording.parent().unwrap_or(Path::new("."));
            let clouds = rec
                .load_scenes(base)?
                .into_iter()
                .map(Option::unwrap_or_default)
                .collect();
            let id = id.unwrap_or_else(|| rec.dataset_id.clone());
            let traj = ingest(Ingest {
                id: &id,
                model: &model,
                side: side.into(),
                source: match source {
                    SourceArg::Human => dataset::Source::Human,
                    SourceArg::Robot => dataset::Source::Robot,
                },
                pose_frame: rec.pose_frame,
                fps: rec.fps,
                instruction: &instruction,
                wrists: &wrists,
                retargeted: &retargeted,
                clouds,
                segmentation: None,
            })?;
            write_trajectory(&traj, &out)?;
            println!("{}", serde_json::to_string_pretty(&traj.stats())?);
        }
        DatasetCmd::Stats {
            shards,
            min_convergence,
            min_frames,
        } => {
            if shards.is_empty() {
                bail!("give at least one shard directory");
            }
            let trajs = shards.iter().map(read_trajectory).collect::<Result<Vec<_>, _>>()?;
            let cfg = FilterConfig {
                min_convergence,
                min_frames,
                ..FilterConfig::default()
            };
            let (kept, dropped) = filter_invalid(trajs, &cfg);
            let doc = serde_json::json!({
                "kept": kept.iter().map(|t| t.stats()).collect::<Vec<_>>(),
                "dropped": dropped,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        DatasetCmd::MixPreview {
            human,
            robot,
            human_weight,
            robot_weight,
            batch_size,
            batches,
            seed,
        } => {
            let spec = MixSpec {
                human_count: human,
                robot_count: robot,
                human_weight,
                robot_weight,
                seed,
            };
            let mut stream = mix_batches(human, robot, &spec, batch_size)?;
            for b in 0..batches {
                let batch = stream.next().expect("stream is endless");
                let h = batch.iter().filter(|i| i.source == dataset::Source::Human).count();
                println!("batch {b}: {h} human / {} robot", batch.len() - h);
            }
            let total = stream.histogram[0] + stream.histogram[1];
            println!(
                "drawn {} human / {} robot ({:.3} human, expected {:.3}), {} full epochs",
                stream.histogram[0],
                stream.histogram[1],
                stream.histogram[0] as f64 / total.max(1) as f64,
                spec.human_fraction(),
                stream.epoch_histograms.len()
            );
        }
    }
    Ok(())
}
