//! RGB-D frames and colored pointclouds: pinhole unprojection, hand-mask removal,
//! robot-hand surface sampling, z-buffered reprojection, crop and downsampling.
//!
//! Camera convention: +z forward, +x right, +y down, pixel `(u, v)` = (column, row).

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handmodel::{HandModel, Shape};
use crate::kinematics::{forward_kinematics, JointState};
use crate::pose::Pose;

pub const DEFAULT_DEPTH_SCALE: f64 = 0.00025;

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("point {0} has no source pixel")]
    MissingProvenance(usize),
    #[error("link '{0}' has no visual primitive")]
    NoGeometry(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed cloud blob: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn default_depth_scale() -> f64 {
    DEFAULT_DEPTH_SCALE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Meters per depth unit.
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), PointCloudError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width >= 1
            && self.height >= 1
            && self.depth_scale > 0.0
            && self.depth_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PointCloudError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Nearest pixel for a camera-frame point, or `None` behind the camera or off-image.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(u32, u32)> {
        if !(p.z > 0.0) {
            return None;
        }
        let u = (self.fx * p.x / p.z + self.cx).round();
        let v = (self.fy * p.y / p.z + self.cy).round();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((u as u32, v as u32))
    }

    pub fn unproject_pixel(&self, u: u32, v: u32, depth_units: u16) -> Vector3<f64> {
        let d = depth_units as f64 * self.depth_scale;
        Vector3::new(
            d * (u as f64 - self.cx) / self.fx,
            d * (v as f64 - self.cy) / self.fy,
            d,
        )
    }
}

/// Row-major color and depth images. Depth 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub intrinsics: CameraIntrinsics,
    pub color: Vec<[u8; 3]>,
    pub depth: Vec<u16>,
}

impl RgbdFrame {
    pub fn new(
        intrinsics: CameraIntrinsics,
        color: Vec<[u8; 3]>,
        depth: Vec<u16>,
    ) -> Result<Self, PointCloudError> {
        intrinsics.validate()?;
        let n = intrinsics.pixel_count();
        for (what, len) in [("color image", color.len()), ("depth image", depth.len())] {
            if len != n {
                return Err(PointCloudError::DimensionMismatch {
                    what,
                    expected: format!("{} pixels", n),
                    found: format!("{} pixels", len),
                });
            }
        }
        Ok(Self {
            intrinsics,
            color,
            depth,
        })
    }

    pub fn blank(intrinsics: CameraIntrinsics) -> Result<Self, PointCloudError> {
        let n = intrinsics.pixel_count();
        Self::new(intrinsics, vec![[0; 3]; n], vec![0; n])
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.intrinsics.width as usize + u as usize
    }

    pub fn valid_pixels(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0).count()
    }
}

/// `true` marks a human-hand pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl PixelMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for v in 0..height {
            for u in 0..width {
                m.set(u, v, f(u, v));
            }
        }
        m
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, on: bool) {
        let i = v as usize * self.width as usize + u as usize;
        self.data[i] = on;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    fn check(&self, w: u32, h: u32) -> Result<(), PointCloudError> {
        if self.width != w || self.height != h || self.data.len() != w as usize * h as usize {
            return Err(PointCloudError::DimensionMismatch {
                what: "pixel mask",
                expected: format!("{w}x{h}"),
                found: format!("{}x{}", self.width, self.height),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointOrigin {
    Scene,
    RobotHand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub xyz: Vector3<f64>,
    pub rgb: [u8; 3],
    /// Source pixel `(u, v)` for points that came from an image.
    pub pixel: Option<(u32, u32)>,
    pub origin: PointOrigin,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.xyz.iter().all(|c| c.is_finite()))
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let s: Vector3<f64> = self.points.iter().map(|p| p.xyz).sum();
        Some(s / self.points.len() as f64)
    }

    pub fn transformed(&self, g: &Pose) -> PointCloud {
        PointCloud::new(
            self.points
                .iter()
                .map(|p| Point {
                    xyz: g.transform_point(&p.xyz),
                    ..*p
                })
                .collect(),
        )
    }

    pub fn count_origin(&self, origin: PointOrigin) -> usize {
        self.points.iter().filter(|p| p.origin == origin).count()
    }

    /// Little-endian binary form used by the dataset blob store.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.points.len() * POINT_BYTES);
        out.extend_from_slice(CLOUD_MAGIC);
        out.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.points.len() as u64).to_le_bytes());
        for p in &self.points {
            for c in p.xyz.iter() {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&p.rgb);
            out.push(match p.origin {
                PointOrigin::Scene => 0,
                PointOrigin::RobotHand => 1,
            });
            let (flag, (u, v)) = match p.pixel {
                Some(px) => (1u8, px),
                None => (0u8, (0, 0)),
            };
            out.push(flag);
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, PointCloudError> {
        let bad = |m: &str| PointCloudError::Malformed(m.to_string());
        if b.len() < 16 || &b[..4] != CLOUD_MAGIC {
            return Err(bad("missing header"));
        }
        let version = u32::from_le_bytes(b[4..8].try_into().unwrap());
        if version != CLOUD_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(b[8..16].try_into().unwrap()) as usize;
        let body = &b[16..];
        if n.checked_mul(POINT_BYTES) != Some(body.len()) {
            return Err(bad("length does not match point count"));
        }
        let mut points = Vec::with_capacity(n);
        for rec in body.chunks_exact(POINT_BYTES) {
            let f = |i: usize| f64::from_le_bytes(rec[i * 8..i * 8 + 8].try_into().unwrap());
            let origin = match rec[27] {
                0 => PointOrigin::Scene,
                1 => PointOrigin::RobotHand,
                o => return Err(bad(&format!("unknown origin tag {o}"))),
            };
            let u = u32::from_le_bytes(rec[29..33].try_into().unwrap());
            let v = u32::from_le_bytes(rec[33..37].try_into().unwrap());
            let pixel = match rec[28] {
                0 => None,
                1 => Some((u, v)),
                t => return Err(bad(&format!("unknown pixel flag {t}"))),
            };
            points.push(Point {
                xyz: Vector3::new(f(0), f(1), f(2)),
                rgb: [rec[24], rec[25], rec[26]],
                pixel,
                origin,
            });
        }
        Ok(Self { points })
    }

    /// ASCII PLY with float xyz and uchar color, for external viewers.
    pub fn to_ply(&self) -> String {
        let mut s = format!(
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
            self.points.len()
        );
        for p in &self.points {
            s.push_str(&format!(
                "{} {} {} {} {} {}\n",
                p.xyz.x, p.xyz.y, p.xyz.z, p.rgb[0], p.rgb[1], p.rgb[2]
            ));
        }
        s
    }
}

const CLOUD_MAGIC: &[u8; 4] = b"DXPC";
const CLOUD_VERSION: u32 = 1;
const POINT_BYTES: usize = 24 + 3 + 1 + 1 + 8;

/// Colored camera-frame cloud from every valid, unmasked pixel, in row-major order.
pub fn unproject(frame: &RgbdFrame, mask: Option<&PixelMask>) -> Result<PointCloud, PointCloudError> {
    if let Some(m) = mask {
        m.check(frame.width(), frame.height())?;
    }
    let mut points = Vec::with_capacity(frame.valid_pixels());
    for v in 0..frame.height() {
        for u in 0..frame.width() {
            let i = frame.index(u, v);
            let d = frame.depth[i];
            if d == 0 || mask.is_some_and(|m| m.data[i]) {
                continue;
            }
            points.push(Point {
                xyz: frame.intrinsics.unproject_pixel(u, v, d),
                rgb: frame.color[i],
                pixel: Some((u, v)),
                origin: PointOrigin::Scene,
            });
        }
    }
    Ok(PointCloud { points })
}

/// Drop points whose source pixel is masked, preserving the order of the rest.
pub fn remove_hand_points(cloud: &PointCloud, mask: &PixelMask) -> Result<PointCloud, PointCloudError> {
    let mut points = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let (u, v) = p.pixel.ok_or(PointCloudError::MissingProvenance(i))?;
        if u >= mask.width || v >= mask.height {
            return Err(PointCloudError::DimensionMismatch {
                what: "source pixel",
                expected: format!("inside {}x{}", mask.width, mask.height),
                found: format!("({u}, {v})"),
            });
        }
        if !mask.get(u, v) {
            points.push(*p);
        }
    }
    Ok(PointCloud { points })
}

/// Pinhole projection with a z-buffer: each pixel keeps the nearest point. Points behind
/// the camera, off-image, or beyond the 16-bit depth range are dropped. Ties on depth
/// keep the earlier point.
pub fn reproject(cloud: &PointCloud, intrinsics: &CameraIntrinsics) -> Result<RgbdFrame, PointCloudError> {
    let mut frame = RgbdFrame::blank(*intrinsics)?;
    let mut zbuf = vec![f64::INFINITY; intrinsics.pixel_count()];
    for p in &cloud.points {
        let Some((u, v)) = intrinsics.project(&p.xyz) else {
            continue;
        };
        let units = (p.xyz.z / intrinsics.depth_scale).round();
        if !(units >= 1.0 && units <= u16::MAX as f64) {
            continue;
        }
        let i = frame.index(u, v);
        if p.xyz.z < zbuf[i] {
            zbuf[i] = p.xyz.z;
            frame.depth[i] = units as u16;
            frame.color[i] = p.rgb;
        }
    }
    Ok(frame)
}

/// Keep points with `lo ≤ p ≤ hi` componentwise.
pub fn crop_box(cloud: &PointCloud, lo: &Vector3<f64>, hi: &Vector3<f64>) -> PointCloud {
    PointCloud::new(
        cloud
            .points
            .iter()
            .filter(|p| (0..3).all(|k| lo[k] <= p.xyz[k] && p.xyz[k] <= hi[k]))
            .copied()
            .collect(),
    )
}

/// Farthest-point sampling. The first point is drawn uniformly with a seeded generator;
/// distance ties go to the lowest index. Output is in selection order.
pub fn downsample_fps(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, PointCloudError> {
    if n == 0 {
        return Err(PointCloudError::InvalidArgument("n must be ≥ 1".into()));
    }
    let total = cloud.len();
    if total == 0 {
        return Ok(PointCloud::default());
    }
    let k = n.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = rng.random_range(0..total);
    let mut dist = vec![f64::INFINITY; total];
    let mut taken = vec![false; total];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        taken[current] = true;
        out.push(cloud.points[current]);
        let c = cloud.points[current].xyz;
        let mut next = None;
        let mut far = -1.0;
        for (i, p) in cloud.points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = (p.xyz - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > far {
                far = dist[i];
                next = Some(i);
            }
        }
        match next {
            Some(i) => current = i,
            None => break,
        }
    }
    Ok(PointCloud::new(out))
}

/// One point per occupied voxel: mean position and color, no source pixel. Voxels are
/// emitted in order of first occupancy.
pub fn downsample_voxel(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, PointCloudError> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(PointCloudError::InvalidArgument("voxel size must be > 0".into()));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut acc: Vec<(Vector3<f64>, [u64; 3], usize, PointOrigin)> = Vec::new();
    for p in &cloud.points {
        let key = [0, 1, 2].map(|k| (p.xyz[k] / voxel).floor() as i64);
        let slot = *slots.entry(key).or_insert_with(|| {
            acc.push((Vector3::zeros(), [0; 3], 0, p.origin));
            acc.len() - 1
        });
        let a = &mut acc[slot];
        a.0 += p.xyz;
        for c in 0..3 {
            a.1[c] += p.rgb[c] as u64;
        }
        a.2 += 1;
    }
    Ok(PointCloud::new(
        acc.into_iter()
            .map(|(s, rgb, n, origin)| Point {
                xyz: s / n as f64,
                rgb: rgb.map(|c| ((c as f64) / n as f64).round() as u8),
                pixel: None,
                origin,
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Downsample {
    Fps { n: usize, seed: u64 },
    Voxel { size: f64 },
}

pub fn downsample(cloud: &PointCloud, how: &Downsample) -> Result<PointCloud, PointCloudError> {
    match *how {
        Downsample::Fps { n, seed } => downsample_fps(cloud, n, seed),
        Downsample::Voxel { size } => downsample_voxel(cloud, size),
    }
}

/// Scene followed by robot-hand samples, each point tagged with where it came from.
pub fn compose_scene(scene: &PointCloud, hand_samples: &PointCloud) -> PointCloud {
    let mut points = Vec::with_capacity(scene.len() + hand_samples.len());
    points.extend(scene.points.iter().map(|p| Point {
        origin: PointOrigin::Scene,
        ..*p
    }));
    points.extend(hand_samples.points.iter().map(|p| Point {
        origin: PointOrigin::RobotHand,
        ..*p
    }));
    PointCloud { points }
}

// ---------------------------------------------------------------------------
// Surface sampling

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

pub fn shape_area(shape: &Shape) -> f64 {
    use std::f64::consts::PI;
    match *shape {
        Shape::Sphere { radius } => 4.0 * PI * radius * radius,
        Shape::Box { size: [x, y, z] } => 2.0 * (x * y + y * z + x * z),
        Shape::Capsule { radius, length } => 2.0 * PI * radius * length + 4.0 * PI * radius * radius,
    }
}

/// Split `total` proportionally to `weights`, largest remainder first, so the parts sum
/// to `total` exactly.
fn split_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let raw: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Fibonacci lattice on the unit sphere; `z_lo..1` restricts to a zonal band, which is
/// still area-uniform because band area is linear in z.
fn fibonacci_band(n: usize, z_lo: f64) -> impl Iterator<Item = Vector3<f64>> {
    (0..n).map(move |i| {
        let z = 1.0 - (1.0 - z_lo) * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = i as f64 * GOLDEN_ANGLE;
        Vector3::new(r * phi.cos(), r * phi.sin(), z)
    })
}

/// Low-discrepancy points on the unit square.
fn fibonacci_square(n: usize) -> impl Iterator<Item = (f64, f64)> {
    (0..n).map(move |i| ((i as f64 + 0.5) / n as f64, (i as f64 * INV_PHI + 0.5).fract()))
}

/// Deterministic, area-uniform samples on a primitive in its own frame.
pub fn sample_shape(shape: &Shape, count: usize) -> Vec<Vector3<f64>> {
    use std::f64::consts::TAU;
    match *shape {
        Shape::Sphere { radius } => fibonacci_band(count, -1.0).map(|p| p * radius).collect(),
        Shape::Box { size } => {
            let h = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
            // faces: normal axis k, sign s; in-plane axes a, b
            let faces: Vec<(usize, f64)> = (0..3).flat_map(|k| [(k, 1.0), (k, -1.0)]).collect();
            let areas: Vec<f64> = faces
                .iter()
                .map(|&(k, _)| size[(k + 1) % 3] * size[(k + 2) % 3])
                .collect();
            let counts = split_counts(count, &areas);
            let mut out = Vec::with_capacity(count);
            for (&(k, s), &n) in faces.iter().zip(&counts) {
                let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                for (x, y) in fibonacci_square(n) {
                    let mut p = Vector3::zeros();
                    p[k] = s * h[k];
                    p[a] = (2.0 * x - 1.0) * h[a];
                    p[b] = (2.0 * y - 1.0) * h[b];
                    out.push(p);
                }
            }
            out
        }
        Shape::Capsule { radius, length } => {
            let cyl = TAU * radius * length;
            let cap = TAU * radius * radius;
            let counts = split_counts(count, &[cyl, cap, cap]);
            let half = length / 2.0;
            let mut out = Vec::with_capacity(count);
            for (x, y) in fibonacci_square(counts[0]) {
                let th = TAU * y;
                out.push(Vector3::new(radius * th.cos(), radius * th.sin(), (2.0 * x - 1.0) * half));
            }
            for p in fibonacci_band(counts[1], 0.0) {
                out.push(p * radius + Vector3::new(0.0, 0.0, half));
            }
            for p in fibonacci_band(counts[2], 0.0) {
                out.push(Vector3::new(p.x, p.y, -p.z) * radius - Vector3::new(0.0, 0.0, half));
            }
            out
        }
    }
}

/// Surface samples of every link primitive at configuration `q`, placed by forward
/// kinematics from the dummy base. Each link gets `round(density · area)` points in the
/// link's color. Links without a primitive are skipped, or rejected when `strict`.
pub fn sample_hand_surface(
    model: &HandModel,
    q: &JointState,
    world_dummy: &Pose,
    offset: &Pose,
    density: f64,
    strict: bool,
) -> Result<PointCloud, PointCloudError> {
    if !(density >= 0.0 && density.is_finite()) {
        return Err(PointCloudError::InvalidArgument("density must be ≥ 0".into()));
    }
    if q.len() != model.full_dof {
        return Err(PointCloudError::DimensionMismatch {
            what: "joint state",
            expected: model.full_dof.to_string(),
            found: q.len().to_string(),
        });
    }
    let fk = forward_kinematics(model, q, world_dummy, offset);
    let mut points = Vec::new();
    for (l, link) in model.links.iter().enumerate() {
        let Some(vis) = &link.visual else {
            if strict {
                return Err(PointCloudError::NoGeometry(link.name.clone()));
            }
            continue;
        };
        let pose = &fk.link_poses[l] * &vis.origin.to_pose();
        let n = (density * shape_area(&vis.shape)).round() as usize;
        points.extend(sample_shape(&vis.shape, n).into_iter().map(|p| Point {
            xyz: pose.transform_point(&p),
            rgb: link.color,
            pixel: None,
            origin: PointOrigin::RobotHand,
        }));
    }
    Ok(PointCloud { points })
}

// ---------------------------------------------------------------------------
// Fixture files: color PPM (P6), 16-bit depth PGM (P5), 8-bit mask PGM, JSON intrinsics

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PointCloudError + '_ {
    move |source| PointCloudError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn img_err(path: &Path, e: impl std::fmt::Display) -> PointCloudError {
    PointCloudError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read_pnm(path: &Path) -> Result<image::DynamicImage, PointCloudError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| img_err(path, e))
}

fn write_pnm(
    path: &Path,
    subtype: PnmSubtype,
    data: &[u8],
    w: u32,
    h: u32,
    color: ExtendedColorType,
) -> Result<(), PointCloudError> {
    let mut buf = Cursor::new(Vec::new());
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(data, w, h, color)
        .map_err(|e| img_err(path, e))?;
    std::fs::write(path, buf.into_inner()).map_err(io_err(path))
}

fn check_size(path: &Path, w: u32, h: u32, intr: &CameraIntrinsics) -> Result<(), PointCloudError> {
    if (w, h) != (intr.width, intr.height) {
        return Err(PointCloudError::DimensionMismatch {
            what: "image size",
            expected: format!("{}x{}", intr.width, intr.height),
            found: format!("{w}x{h} in {}", path.display()),
        });
    }
    Ok(())
}

pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics, PointCloudError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let intr: CameraIntrinsics = serde_json::from_str(&text).map_err(|source| PointCloudError::Json {
        path: path.display().to_string(),
        source,
    })?;
    intr.validate()?;
    Ok(intr)
}

pub fn save_intrinsics(intr: &CameraIntrinsics, path: impl AsRef<Path>) -> Result<(), PointCloudError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(intr).expect("intrinsics serialize");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn load_frame(
    color: impl AsRef<Path>,
    depth: impl AsRef<Path>,
    intrinsics: impl AsRef<Path>,
) -> Result<RgbdFrame, PointCloudError> {
    let intr = load_intrinsics(intrinsics)?;
    let (cp, dp) = (color.as_ref(), depth.as_ref());
    let c = read_pnm(cp)?.into_rgb8();
    check_size(cp, c.width(), c.height(), &intr)?;
    let d = read_pnm(dp)?.into_luma16();
    check_size(dp, d.width(), d.height(), &intr)?;
    let color = c.pixels().map(|p| p.0).collect();
    let depth = d.pixels().map(|p| p.0[0]).collect();
    RgbdFrame::new(intr, color, depth)
}

pub fn save_frame(
    frame: &RgbdFrame,
    color: impl AsRef<Path>,
    depth: impl AsRef<Path>,
    intrinsics: impl AsRef<Path>,
) -> Result<(), PointCloudError> {
    let (w, h) = (frame.width(), frame.height());
    let rgb: Vec<u8> = frame.color.iter().flatten().copied().collect();
    write_pnm(
        color.as_ref(),
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        &rgb,
        w,
        h,
        ExtendedColorType::Rgb8,
    )?;
    // 16-bit PGM is written by hand: maxval 65535, samples big-endian
    let dp = depth.as_ref();
    let mut d = format!("P5\n{w} {h}\n65535\n").into_bytes();
    d.extend(frame.depth.iter().flat_map(|v| v.to_be_bytes()));
    std::fs::write(dp, d).map_err(io_err(dp))?;
    save_intrinsics(&frame.intrinsics, intrinsics)
}

/// 8-bit PGM; any nonzero sample (255 by convention) marks a hand pixel.
pub fn load_mask(path: impl AsRef<Path>) -> Result<PixelMask, PointCloudError> {
    let path = path.as_ref();
    let g = read_pnm(path)?.into_luma8();
    Ok(PixelMask {
        width: g.width(),
        height: g.height(),
        data: g.pixels().map(|p| p.0[0] != 0).collect(),
    })
}

pub fn save_mask(mask: &PixelMask, path: impl AsRef<Path>) -> Result<(), PointCloudError> {
    let data: Vec<u8> = mask.data.iter().map(|b| if *b { 255 } else { 0 }).collect();
    write_pnm(
        path.as_ref(),
        PnmSubtype::Graymap(SampleEncoding::Binary),
        &data,
        mask.width,
        mask.height,
        ExtendedColorType::L8,
    )
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud, PointCloudError> {
    let path = path.as_ref();
    PointCloud::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), PointCloudError> {
    let path = path.as_ref();
    std::fs::write(path, cloud.to_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr(w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: w,
            height: h,
            depth_scale: 0.001,
        }
    }

    fn single(u: u32, v: u32, depth_m: f64, w: u32, h: u32) -> RgbdFrame {
        let mut f = RgbdFrame::blank(intr(w, h)).unwrap();
        let i = f.index(u, v);
        f.depth[i] = (depth_m / 0.001) as u16;
        f.color[i] = [1, 2, 3];
        f
    }

    #[test]
    fn principal_point_and_similar_triangles() {
        let c = unproject(&single(50, 50, 1.0, 200, 100), None).unwrap();
        assert_eq!(c.points[0].xyz, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(c.points[0].pixel, Some((50, 50)));
        let c = unproject(&single(150, 50, 2.0, 200, 100), None).unwrap();
        assert_eq!(c.points[0].xyz, Vector3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn full_mask_gives_empty_cloud() {
        let f = single(50, 50, 1.0, 100, 100);
        let m = PixelMask::from_fn(100, 100, |_, _| true);
        assert!(unproject(&f, Some(&m)).unwrap().is_empty());
        let bad = PixelMask::empty(10, 10);
        assert!(matches!(
            unproject(&f, Some(&bad)),
            Err(PointCloudError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn remove_needs_provenance() {
        let c = PointCloud::new(vec![Point {
            xyz: Vector3::z(),
            rgb: [0; 3],
            pixel: None,
            origin: PointOrigin::Scene,
        }]);
        assert!(matches!(
            remove_hand_points(&c, &PixelMask::empty(4, 4)),
            Err(PointCloudError::MissingProvenance(0))
        ));
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let mk = |z: f64, rgb| Point {
            xyz: Vector3::new(0.0, 0.0, z),
            rgb,
            pixel: None,
            origin: PointOrigin::Scene,
        };
        let c = PointCloud::new(vec![mk(2.0, [9, 9, 9]), mk(1.0, [5, 5, 5]), mk(-1.0, [7, 7, 7])]);
        let f = reproject(&c, &intr(100, 100)).unwrap();
        let i = f.index(50, 50);
        assert_eq!(f.depth[i], 1000);
        assert_eq!(f.color[i], [5, 5, 5]);
        assert_eq!(f.valid_pixels(), 1);
        let behind = reproject(&PointCloud::new(vec![mk(-1.0, [1, 1, 1])]), &intr(100, 100)).unwrap();
        assert_eq!(behind.valid_pixels(), 0);
    }

    #[test]
    fn fps_square_picks_diagonal() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
            .iter()
            .map(|[x, y]| Point {
                xyz: Vector3::new(*x, *y, 0.0),
                rgb: [0; 3],
                pixel: None,
                origin: PointOrigin::Scene,
            })
            .collect();
        let c = PointCloud::new(pts);
        for seed in 0..8 {
            let s = downsample_fps(&c, 2, seed).unwrap();
            assert!(((s.points[0].xyz - s.points[1].xyz).norm() - 2f64.sqrt()).abs() < 1e-15);
        }
        assert_eq!(downsample_fps(&c, 10, 1).unwrap().len(), 4);
        assert!(downsample_fps(&c, 0, 1).is_err());
    }

    #[test]
    fn split_counts_is_exact() {
        assert_eq!(split_counts(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(split_counts(7, &[0.0, 2.0]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn sphere_samples_lie_on_surface() {
        let s = sample_shape(&Shape::Sphere { radius: 1.0 }, 500);
        assert_eq!(s.len(), 500);
        assert!(s.iter().all(|p| (p.norm() - 1.0).abs() < 1e-9));
        let c: Vector3<f64> = s.iter().sum::<Vector3<f64>>() / 500.0;
        assert!(c.norm() < 1e-2);
    }

    #[test]
    fn capsule_samples_lie_on_surface() {
        let (r, l) = (0.01, 0.04);
        for p in sample_shape(&Shape::Capsule { radius: r, length: l }, 300) {
            let zc = p.z.clamp(-l / 2.0, l / 2.0);
            let d = (p - Vector3::new(0.0, 0.0, zc)).norm();
            assert!((d - r).abs() < 1e-12);
        }
    }

    #[test]
    fn cloud_blob_round_trip() {
        let f = single(10, 20, 0.5, 100, 100);
        let mut c = unproject(&f, None).unwrap();
        c.points.push(Point {
            xyz: Vector3::new(0.1, -0.2, 0.3),
            rgb: [4, 5, 6],
            pixel: None,
            origin: PointOrigin::RobotHand,
        });
        let b = c.to_bytes();
        assert_eq!(PointCloud::from_bytes(&b).unwrap(), c);
        assert!(PointCloud::from_bytes(&b[..b.len() - 1]).is_err());
    }
}
