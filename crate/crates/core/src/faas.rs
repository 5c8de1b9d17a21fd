//! The 82-dimensional function–actuator–aligned action vector.
//!
//! Layout:
//!
//! | range    | content                               |
//! |----------|---------------------------------------|
//! | 0..9     | left wrist (x-axis, y-axis, translation) |
//! | 9..18    | right wrist                           |
//! | 18..50   | left-hand joint slots 0..32           |
//! | 50..82   | right-hand joint slots 0..32          |
//!
//! Joints are placed by their hand's slot map, so functionally similar actuators of
//! different hands share a coordinate. Decoding into a hand that uses slots the source
//! never populated fills them with the mid-range rest value and reports them.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handmodel::{HandModel, Side, SLOTS_PER_HAND};
use crate::kinematics::{apply_mimic, JointState};
use crate::pose::Pose;

pub const FAAS_DIM: usize = 82;
pub const WRIST_DIM: usize = 9;
/// Size of one serialized vector: 82 little-endian f32 plus an 82-bit mask.
pub const FAAS_RECORD_BYTES: usize = FAAS_DIM * 4 + MASK_BYTES;
pub const MASK_BYTES: usize = 11;
/// Chunk horizon used by the chunk tooling unless configured otherwise.
pub const DEFAULT_HORIZON: usize = 32;

const ORTHONORMAL_TOL: f64 = 1e-6;
const DEGENERATE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FaasError {
    #[error("rotation is not orthonormal (error {0:.3e})")]
    InvalidRotation(f64),
    #[error("degenerate 6d rotation input")]
    DegenerateInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed FAAS record: {0}")]
    Malformed(String),
}

pub fn wrist_offset(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => WRIST_DIM,
    }
}

pub fn joint_offset(side: Side) -> usize {
    match side {
        Side::Left => 2 * WRIST_DIM,
        Side::Right => 2 * WRIST_DIM + SLOTS_PER_HAND,
    }
}

/// One validity bit per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct FaasMask(pub u128);

impl FaasMask {
    pub fn get(&self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        if on {
            self.0 |= 1 << i;
        } else {
            self.0 &= !(1 << i);
        }
    }

    pub fn count(&self) -> usize {
        self.0.count_ones() as usize
    }

    /// 11 bytes, least-significant bit first.
    pub fn to_bytes(&self) -> [u8; MASK_BYTES] {
        let mut out = [0u8; MASK_BYTES];
        for i in 0..FAAS_DIM {
            if self.get(i) {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(b: &[u8; MASK_BYTES]) -> Result<Self, FaasError> {
        let mut m = FaasMask(0);
        for i in 0..MASK_BYTES * 8 {
            if b[i / 8] >> (i % 8) & 1 == 1 {
                if i >= FAAS_DIM {
                    return Err(FaasError::Malformed(format!("mask bit {i} beyond dimension")));
                }
                m.set(i, true);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaasVector {
    pub values: [f64; FAAS_DIM],
    pub mask: FaasMask,
}

impl Default for FaasVector {
    fn default() -> Self {
        Self::empty()
    }
}

impl FaasVector {
    pub fn empty() -> Self {
        Self {
            values: [0.0; FAAS_DIM],
            mask: FaasMask(0),
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
        self.mask.set(i, true);
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.mask.get(i).then_some(self.values[i])
    }

    pub fn has_wrist(&self, side: Side) -> bool {
        let o = wrist_offset(side);
        (o..o + WRIST_DIM).all(|i| self.mask.get(i))
    }

    pub fn set_wrist(&mut self, side: Side, pose: &Pose) -> Result<(), FaasError> {
        let r6 = encode_rotation_6d(&pose.rotation)?;
        let o = wrist_offset(side);
        for (k, v) in r6.iter().chain(pose.translation.iter()).enumerate() {
            self.set(o + k, *v);
        }
        Ok(())
    }

    /// Decoded wrist pose, `None` when that side's wrist block is unpopulated.
    pub fn wrist(&self, side: Side) -> Result<Option<Pose>, FaasError> {
        if !self.has_wrist(side) {
            return Ok(None);
        }
        let o = wrist_offset(side);
        let v = &self.values[o..o + WRIST_DIM];
        let r = decode_rotation_6d(&[v[0], v[1], v[2], v[3], v[4], v[5]])?;
        Ok(Some(Pose::new(r, Vector3::new(v[6], v[7], v[8]))))
    }

    /// Round every value through f32, the precision used on disk.
    pub fn quantized(&self) -> Self {
        let mut out = *self;
        for v in out.values.iter_mut() {
            *v = *v as f32 as f64;
        }
        out
    }

    pub fn to_bytes(&self) -> [u8; FAAS_RECORD_BYTES] {
        let mut out = [0u8; FAAS_RECORD_BYTES];
        for (i, v) in self.values.iter().enumerate() {
            out[4 * i..4 * i + 4].copy_from_slice(&(*v as f32).to_le_bytes());
        }
        out[FAAS_DIM * 4..].copy_from_slice(&self.mask.to_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FaasError> {
        if b.len() != FAAS_RECORD_BYTES {
            return Err(FaasError::DimensionMismatch {
                expected: FAAS_RECORD_BYTES,
                found: b.len(),
            });
        }
        let mut values = [0.0; FAAS_DIM];
        for (i, v) in values.iter_mut().enumerate() {
            *v = f32::from_le_bytes(b[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        }
        let mask = FaasMask::from_bytes(b[FAAS_DIM * 4..].try_into().unwrap())?;
        Ok(Self { values, mask })
    }
}

/// Serde form used by the CLI: `{ "values": [82 numbers], "mask": [populated indices] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaasJson {
    pub values: Vec<f64>,
    pub mask: Vec<usize>,
}

impl From<&FaasVector> for FaasJson {
    fn from(v: &FaasVector) -> Self {
        Self {
            values: v.values.to_vec(),
            mask: (0..FAAS_DIM).filter(|&i| v.mask.get(i)).collect(),
        }
    }
}

impl TryFrom<FaasJson> for FaasVector {
    type Error = FaasError;

    fn try_from(j: FaasJson) -> Result<Self, FaasError> {
        if j.values.len() != FAAS_DIM {
            return Err(FaasError::DimensionMismatch {
                expected: FAAS_DIM,
                found: j.values.len(),
            });
        }
        let mut v = FaasVector::empty();
        v.values.copy_from_slice(&j.values);
        for i in j.mask {
            if i >= FAAS_DIM {
                return Err(FaasError::Malformed(format!("mask index {i}")));
            }
            v.mask.set(i, true);
        }
        for i in 0..FAAS_DIM {
            if !v.mask.get(i) && v.values[i] != 0.0 {
                return Err(FaasError::Malformed(format!("unpopulated index {i} is non-zero")));
            }
        }
        Ok(v)
    }
}

// ---------------------------------------------------------------------------
// 6d rotations

/// First two columns of `r` (the local x- and y-axes), concatenated.
pub fn encode_rotation_6d(r: &Matrix3<f64>) -> Result<[f64; 6], FaasError> {
    let err = Pose::new(*r, Vector3::zeros()).orthonormality_error();
    if !(err <= ORTHONORMAL_TOL) {
        return Err(FaasError::InvalidRotation(err));
    }
    Ok([r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]])
}

/// Gram–Schmidt: normalize the first vector, strip its component from the second,
/// complete with the cross product.
pub fn decode_rotation_6d(v: &[f64; 6]) -> Result<Matrix3<f64>, FaasError> {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let an = a.norm();
    if !an.is_finite() || an <= DEGENERATE_TOL {
        return Err(FaasError::DegenerateInput);
    }
    let x = a / an;
    let b_perp = b - x * x.dot(&b);
    let bn = b_perp.norm();
    if !bn.is_finite() || bn <= DEGENERATE_TOL * b.norm().max(1.0) {
        return Err(FaasError::DegenerateInput);
    }
    let y = b_perp / bn;
    let z = x.cross(&y);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

// ---------------------------------------------------------------------------
// State encoding

/// Proprioceptive state of one hand: absolute wrist pose plus joint slots.
pub fn encode_state(
    model: &HandModel,
    side: Side,
    wrist: &Pose,
    q: &JointState,
) -> Result<FaasVector, FaasError> {
    if q.len() != model.full_dof {
        return Err(FaasError::DimensionMismatch {
            expected: model.full_dof,
            found: q.len(),
        });
    }
    let q = apply_mimic(model, q).q;
    let mut v = FaasVector::empty();
    v.set_wrist(side, wrist)?;
    let base = joint_offset(side);
    for (j, &slot) in model.faas_map.slots.iter().enumerate() {
        v.set(base + slot as usize, q[j]);
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedState {
    pub wrist: Pose,
    /// False when the vector carried no wrist for this side (wrist is then identity).
    pub wrist_populated: bool,
    pub q: JointState,
    /// Joints whose slot was unpopulated and took the mid-range rest value.
    pub defaulted: Vec<usize>,
    /// Joints whose decoded value had to be clamped to limits.
    pub clamped: Vec<usize>,
}

/// Read one hand's state out of a vector, possibly encoded by a different hand.
pub fn decode_state(v: &FaasVector, model: &HandModel, side: Side) -> Result<DecodedState, FaasError> {
    let wrist = v.wrist(side)?;
    let base = joint_offset(side);
    let mut q = Vec::with_capacity(model.full_dof);
    let mut defaulted = Vec::new();
    let mut clamped = Vec::new();
    for (j, joint) in model.joints.iter().enumerate() {
        let raw = match v.get(base + model.faas_map.slot_of(j) as usize) {
            Some(x) => x,
            None => {
                defaulted.push(j);
                joint.limits.mid()
            }
        };
        let c = joint.limits.clamp(raw);
        if c != raw {
            clamped.push(j);
        }
        q.push(c);
    }
    let mimic = apply_mimic(model, &JointState(q));
    for s in mimic.clamped {
        if !clamped.contains(&s) {
            clamped.push(s);
        }
    }
    clamped.sort_unstable();
    Ok(DecodedState {
        wrist: wrist.unwrap_or_default(),
        wrist_populated: wrist.is_some(),
        q: mimic.q,
        defaulted,
        clamped,
    })
}

/// Re-express a hand state in another hand (cross-embodiment transfer through slots).
pub fn transfer_state(
    from: &HandModel,
    to: &HandModel,
    side: Side,
    wrist: &Pose,
    q: &JointState,
) -> Result<DecodedState, FaasError> {
    decode_state(&encode_state(from, side, wrist, q)?, to, side)
}

// ---------------------------------------------------------------------------
// Chunks

/// `H` consecutive action vectors sharing one mask; wrist blocks are relative to the
/// chunk's first frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub actions: Vec<FaasVector>,
}

impl ActionChunk {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn mask(&self) -> FaasMask {
        self.actions.first().map(|a| a.mask).unwrap_or_default()
    }

    /// Flattened `H·82` values, step-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.actions.iter().flat_map(|a| a.values).collect()
    }
}

/// Convert absolute-wrist vectors to a chunk whose wrist blocks encode
/// `first⁻¹ ∘ wrist_t`. Joint slots pass through unchanged.
pub fn relative_chunk(absolute: &[FaasVector]) -> Result<ActionChunk, FaasError> {
    let Some(first) = absolute.first() else {
        return Err(FaasError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    };
    if let Some(bad) = absolute.iter().find(|a| a.mask != first.mask) {
        return Err(FaasError::Malformed(format!(
            "chunk vectors disagree on mask ({:#x} vs {:#x})",
            bad.mask.0, first.mask.0
        )));
    }
    let mut actions = absolute.to_vec();
    for side in [Side::Left, Side::Right] {
        let Some(base) = first.wrist(side)? else {
            continue;
        };
        let inv = base.inverse();
        // the first frame is identity by construction; write it exactly
        actions[0].set_wrist(side, &Pose::identity())?;
        for (out, a) in actions.iter_mut().zip(absolute).skip(1) {
            let w = a.wrist(side)?.expect("mask shared across the chunk");
            out.set_wrist(side, &(&inv * &w))?;
        }
    }
    Ok(ActionChunk { actions })
}

pub fn encode_chunk(
    wrists: &[Pose],
    joint_states: &[JointState],
    model: &HandModel,
    side: Side,
) -> Result<ActionChunk, FaasError> {
    if wrists.is_empty() || wrists.len() != joint_states.len() {
        return Err(FaasError::DimensionMismatch {
            expected: wrists.len().max(1),
            found: joint_states.len(),
        });
    }
    let absolute = wrists
        .iter()
        .zip(joint_states)
        .map(|(w, q)| encode_state(model, side, w, q))
        .collect::<Result<Vec<_>, _>>()?;
    relative_chunk(&absolute)
}

/// Inverse of [`encode_chunk`]: `wrist_t = base ∘ Δ_t`.
pub fn decode_chunk(
    chunk: &ActionChunk,
    base: &Pose,
    model: &HandModel,
    side: Side,
) -> Result<Vec<DecodedState>, FaasError> {
    chunk
        .actions
        .iter()
        .map(|a| {
            let mut d = decode_state(a, model, side)?;
            d.wrist = base * &d.wrist;
            Ok(d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn rotation_6d_examples() {
        assert_eq!(
            encode_rotation_6d(&Matrix3::identity()).unwrap(),
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        let rz = Pose::from_xyz_rpy([0.0; 3], [0.0, 0.0, FRAC_PI_2]).rotation;
        let e = encode_rotation_6d(&rz).unwrap();
        let want = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            decode_rotation_6d(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
            Matrix3::identity()
        );
        assert_eq!(
            decode_rotation_6d(&[2.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap(),
            Matrix3::identity()
        );
        assert_eq!(
            decode_rotation_6d(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            Err(FaasError::DegenerateInput)
        );
        assert_eq!(
            decode_rotation_6d(&[0.0; 6]),
            Err(FaasError::DegenerateInput)
        );
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            encode_rotation_6d(&skew),
            Err(FaasError::InvalidRotation(_))
        ));
    }

    fn twig_state(model: &HandModel) -> JointState {
        let mut q = vec![0.0; model.full_dof];
        q[model.joint_index("j0").unwrap()] = 0.1;
        q[model.joint_index("j1").unwrap()] = 0.2;
        q[model.joint_index("j2").unwrap()] = 0.3;
        JointState(q)
    }

    #[test]
    fn twig_left_layout() {
        let m = fixtures::twig();
        let v = encode_state(&m, Side::Left, &Pose::identity(), &twig_state(&m)).unwrap();
        assert_eq!(&v.values[0..9], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v.values[18], 0.1);
        assert_eq!(v.values[19], 0.2);
        assert_eq!(v.values[23], 0.3);
        assert_eq!(v.values[24], 0.8 * 0.3 + 0.1);
        let populated: Vec<usize> = (18..82).filter(|&i| v.mask.get(i)).collect();
        assert_eq!(populated, vec![18, 19, 23, 24]);
        assert!((18..82).filter(|i| !populated.contains(i)).all(|i| v.values[i] == 0.0));
        assert_eq!(v.mask.count(), 9 + m.full_dof);
    }

    #[test]
    fn wrong_length_state_is_rejected() {
        let m = fixtures::twig();
        assert!(matches!(
            encode_state(&m, Side::Right, &Pose::identity(), &JointState(vec![0.0; 3])),
            Err(FaasError::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn same_model_round_trip() {
        let m = fixtures::wuji();
        let q = JointState(m.joints.iter().map(|j| 0.3 * j.limits.lower + 0.7 * j.limits.upper).collect());
        let w = Pose::from_xyz_rpy([0.3, -0.1, 0.5], [0.2, 0.4, -1.1]);
        let d = decode_state(&encode_state(&m, Side::Right, &w, &q).unwrap(), &m, Side::Right).unwrap();
        assert_eq!(d.q, q);
        assert!(d.wrist.max_abs_diff(&w) < 1e-9);
        assert!(d.defaulted.is_empty() && d.clamped.is_empty());
    }

    #[test]
    fn out_of_limit_slot_is_clamped() {
        let m = fixtures::wuji();
        let j = m.joint_index("index_pip").unwrap();
        let mut v = encode_state(&m, Side::Right, &Pose::identity(), &JointState::mid_range(&m)).unwrap();
        v.values[joint_offset(Side::Right) + m.faas_map.slot_of(j) as usize] = 10.0;
        let d = decode_state(&v, &m, Side::Right).unwrap();
        assert_eq!(d.q[j], 1.6);
        assert_eq!(d.clamped, vec![j]);
    }

    #[test]
    fn chunk_examples() {
        let m = fixtures::twig();
        let q = twig_state(&m);
        let w = Pose::from_xyz_rpy([0.1, 0.2, 0.3], [0.1, 0.0, 0.4]);
        let one = encode_chunk(&[w], &[q.clone()], &m, Side::Right).unwrap();
        assert_eq!(one.horizon(), 1);
        assert_eq!(
            &one.actions[0].values[9..18],
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
        let constant = encode_chunk(&[w; 4], &vec![q.clone(); 4], &m, Side::Right).unwrap();
        for a in &constant.actions {
            let d = a.wrist(Side::Right).unwrap().unwrap();
            assert!(d.max_abs_diff(&Pose::identity()) < 1e-15);
        }
        let back = decode_chunk(&constant, &w, &m, Side::Right).unwrap();
        assert!(back.iter().all(|d| d.wrist.max_abs_diff(&w) < 1e-12));
    }

    #[test]
    fn mask_bytes_are_lsb_first() {
        let mut m = FaasMask(0);
        m.set(0, true);
        m.set(9, true);
        m.set(81, true);
        let b = m.to_bytes();
        assert_eq!(b[0], 0b1);
        assert_eq!(b[1], 0b10);
        assert_eq!(b[10], 0b10);
        assert_eq!(FaasMask::from_bytes(&b).unwrap(), m);
    }

    #[test]
    fn record_round_trip_is_f32() {
        let m = fixtures::inspire();
        let v = encode_state(&m, Side::Right, &Pose::from_xyz_rpy([0.1, 0.2, 0.3], [0.3, 0.2, 0.1]), &JointState::mid_range(&m)).unwrap();
        let back = FaasVector::from_bytes(&v.to_bytes()).unwrap();
        assert_eq!(back, v.quantized());
        assert!(FaasVector::from_bytes(&[0u8; 10]).is_err());
    }
}
