//! Dexterous-hand kinematic descriptions.
//!
//! A hand is described by a `.hand.json` document: `links`, `joints` (revolute or
//! fixed, optional `mimic`), `fingertips` in thumb-to-little order and a `faas_map`
//! assigning every revolute joint a slot in the 32-slot per-hand joint block.
//! Fixed joints are folded into their child link, so [`HandModel::joints`] holds only
//! revolute joints, in topological order.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{Pose, XyzRpy};

/// Number of joint slots reserved per hand.
pub const SLOTS_PER_HAND: usize = 32;
/// Slots per finger block (thumb 0-4, index 5-9, middle 10-14, ring 15-19, little 20-24).
pub const SLOTS_PER_FINGER: usize = 5;
pub const WRIST_EXTRA_SLOTS: std::ops::RangeInclusive<u8> = 25..=26;
pub const HAND_EXTRA_SLOTS: std::ops::RangeInclusive<u8> = 27..=31;

pub const FINGER_NAMES: [&str; 5] = ["thumb", "index", "middle", "ring", "little"];

const AXIS_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HandModelError {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, HandModelError> {
    Err(HandModelError::Validation(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(format!("unknown side `{other}` (expected left|right)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub lower: f64,
    pub upper: f64,
}

impl Limits {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        v >= self.lower - slack && v <= self.upper + slack
    }
}

/// Visual primitive attached to a link, used to render the robot hand into scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Full edge lengths along the primitive's x, y, z.
    Box { size: [f64; 3] },
    /// Cylinder of `length` along the primitive's z axis, capped by hemispheres.
    Capsule { radius: f64, length: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visual {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "is_identity_xyzrpy")]
    pub origin: XyzRpy,
}

fn is_identity_xyzrpy(v: &XyzRpy) -> bool {
    *v == XyzRpy::default()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkParent {
    Root,
    /// Child of the revolute joint at this index of [`HandModel::joints`].
    Joint(usize),
    /// Rigidly attached to another link through a folded fixed joint.
    Fixed {
        joint_name: String,
        link: usize,
        origin: XyzRpy,
        origin_pose: Pose,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub visual: Option<Visual>,
    pub color: [u8; 3],
    pub parent: LinkParent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MimicConstraint {
    /// Index of the master joint in [`HandModel::joints`].
    pub master: usize,
    pub multiplier: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent_link: usize,
    pub child_link: usize,
    pub origin: XyzRpy,
    pub origin_pose: Pose,
    pub axis: Vector3<f64>,
    pub limits: Limits,
    pub mimic: Option<MimicConstraint>,
}

impl Joint {
    pub fn is_mimic(&self) -> bool {
        self.mimic.is_some()
    }
}

/// Joint-to-slot assignment for one hand. `slots[j]` is the slot of joint `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaasMap {
    pub side: Side,
    pub slots: Vec<u8>,
}

impl FaasMap {
    pub fn slot_of(&self, joint: usize) -> u8 {
        self.slots[joint]
    }

    pub fn joint_at(&self, slot: u8) -> Option<usize> {
        self.slots.iter().position(|&s| s == slot)
    }

    pub fn occupancy(&self) -> u32 {
        self.slots.iter().fold(0u32, |acc, &s| acc | (1 << s))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Immutable, validated kinematic tree of a dexterous hand.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub name: String,
    pub side: Side,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub fingertip_links: Vec<usize>,
    pub faas_map: FaasMap,
    pub active_dof: usize,
    pub full_dof: usize,
    /// Links in parent-before-child order.
    pub link_order: Vec<usize>,
    /// For each link, the revolute joints on its path from the root (root-first).
    pub link_chain: Vec<Vec<usize>>,
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandDoc {
    name: String,
    side: Side,
    links: Vec<LinkDoc>,
    joints: Vec<JointDoc>,
    fingertips: Vec<String>,
    faas_map: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visual: Option<Visual>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    color: Option<[u8; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum JointKind {
    #[default]
    Revolute,
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    #[serde(rename = "type", default)]
    kind: JointKind,
    parent: String,
    child: String,
    #[serde(default)]
    origin: XyzRpy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limits: Option<Limits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mimic: Option<MimicDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MimicDoc {
    master: String,
    #[serde(default = "one")]
    multiplier: f64,
    #[serde(default)]
    offset: f64,
}

fn one() -> f64 {
    1.0
}

const DEFAULT_COLOR: [u8; 3] = [200, 200, 200];

/// Parse and validate a hand-description document.
pub fn parse_hand_model(text: &str) -> Result<HandModel, HandModelError> {
    let doc: HandDoc = serde_json::from_str(text)?;
    build(doc)
}

pub fn load_hand_model(path: impl AsRef<Path>) -> Result<HandModel, HandModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HandModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_hand_model(&text)
}

fn build(doc: HandDoc) -> Result<HandModel, HandModelError> {
    let mut link_index: HashMap<&str, usize> = HashMap::new();
    for (i, l) in doc.links.iter().enumerate() {
        if link_index.insert(l.name.as_str(), i).is_some() {
            return invalid(format!("duplicate link `{}`", l.name));
        }
    }
    if doc.links.is_empty() {
        return invalid("hand has no links");
    }

    // Incoming edge per link: (document joint index).
    let mut incoming: Vec<Option<usize>> = vec![None; doc.links.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); doc.links.len()];
    let mut joint_names: HashMap<&str, usize> = HashMap::new();
    for (ji, j) in doc.joints.iter().enumerate() {
        if joint_names.insert(j.name.as_str(), ji).is_some() {
            return invalid(format!("duplicate joint `{}`", j.name));
        }
        let Some(&p) = link_index.get(j.parent.as_str()) else {
            return invalid(format!(
                "joint `{}` references unknown parent link `{}`",
                j.name, j.parent
            ));
        };
        let Some(&c) = link_index.get(j.child.as_str()) else {
            return invalid(format!(
                "joint `{}` references unknown child link `{}`",
                j.name, j.child
            ));
        };
        if let Some(prev) = incoming[c] {
            return invalid(format!(
                "link `{}` has two parent joints (`{}` and `{}`)",
                j.child, doc.joints[prev].name, j.name
            ));
        }
        incoming[c] = Some(ji);
        children[p].push(ji);
    }

    let roots: Vec<usize> = (0..doc.links.len()).filter(|&l| incoming[l].is_none()).collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return invalid("kinematic graph has a cycle (no root link)"),
        many => {
            let names: Vec<&str> = many.iter().map(|&l| doc.links[l].name.as_str()).collect();
            return invalid(format!("multiple root links: {}", names.join(", ")));
        }
    };

    // Depth-first pre-order walk from the root fixes the topological order, so each
    // finger's joints stay contiguous.
    let mut link_order = Vec::with_capacity(doc.links.len());
    let mut doc_joint_order = Vec::with_capacity(doc.joints.len());
    let mut stack = vec![(root, None::<usize>)];
    while let Some((l, via)) = stack.pop() {
        if let Some(ji) = via {
            doc_joint_order.push(ji);
        }
        link_order.push(l);
        for &ji in children[l].iter().rev() {
            stack.push((link_index[doc.joints[ji].child.as_str()], Some(ji)));
        }
    }
    if link_order.len() != doc.links.len() {
        let orphan = (0..doc.links.len())
            .find(|l| !link_order.contains(l))
            .expect("some link is unreachable");
        return invalid(format!(
            "kinematic graph has a cycle through link `{}`",
            doc.links[orphan].name
        ));
    }

    // Revolute joints in topological order.
    let revolute_docs: Vec<usize> = doc_joint_order
        .iter()
        .copied()
        .filter(|&ji| doc.joints[ji].kind == JointKind::Revolute)
        .collect();
    let revolute_index: HashMap<&str, usize> = revolute_docs
        .iter()
        .enumerate()
        .map(|(i, &ji)| (doc.joints[ji].name.as_str(), i))
        .collect();

    let mut joints = Vec::with_capacity(revolute_docs.len());
    for &ji in &revolute_docs {
        let j = &doc.joints[ji];
        let Some(axis) = j.axis else {
            return invalid(format!("revolute joint `{}` has no axis", j.name));
        };
        let axis = Vector3::from(axis);
        if !axis.iter().all(|v| v.is_finite()) || (axis.norm() - 1.0).abs() > AXIS_NORM_TOL {
            return invalid(format!("joint `{}` axis is not unit length", j.name));
        }
        let Some(limits) = j.limits else {
            return invalid(format!("revolute joint `{}` has no limits", j.name));
        };
        if !(limits.lower.is_finite() && limits.upper.is_finite()) || limits.lower > limits.upper
        {
            return invalid(format!(
                "joint `{}` has bad limits [{}, {}]",
                j.name, limits.lower, limits.upper
            ));
        }
        check_finite_origin(&j.name, &j.origin)?;
        let mimic = match &j.mimic {
            None => None,
            Some(m) => {
                if m.master == j.name {
                    return invalid(format!("joint `{}` mimics itself", j.name));
                }
                let Some(&master) = revolute_index.get(m.master.as_str()) else {
                    return invalid(format!(
                        "joint `{}` mimics unknown revolute joint `{}`",
                        j.name, m.master
                    ));
                };
                if !(m.multiplier.is_finite() && m.offset.is_finite()) {
                    return invalid(format!("joint `{}` has non-finite mimic terms", j.name));
                }
                Some(MimicConstraint {
                    master,
                    multiplier: m.multiplier,
                    offset: m.offset,
                })
            }
        };
        joints.push(Joint {
            name: j.name.clone(),
            parent_link: link_index[j.parent.as_str()],
            child_link: link_index[j.child.as_str()],
            origin: j.origin,
            origin_pose: j.origin.to_pose(),
            axis,
            limits,
            mimic,
        });
    }
    for j in &joints {
        if let Some(m) = j.mimic {
            if joints[m.master].is_mimic() {
                return invalid(format!(
                    "joint `{}` mimics `{}`, which is itself a mimic joint",
                    j.name, joints[m.master].name
                ));
            }
        }
    }

    let mut links = Vec::with_capacity(doc.links.len());
    for (li, l) in doc.links.iter().enumerate() {
        let parent = match incoming[li] {
            None => LinkParent::Root,
            Some(ji) => {
                let j = &doc.joints[ji];
                match j.kind {
                    JointKind::Revolute => LinkParent::Joint(revolute_index[j.name.as_str()]),
                    JointKind::Fixed => {
                        check_finite_origin(&j.name, &j.origin)?;
                        LinkParent::Fixed {
                            joint_name: j.name.clone(),
                            link: link_index[j.parent.as_str()],
                            origin: j.origin,
                            origin_pose: j.origin.to_pose(),
                        }
                    }
                }
            }
        };
        if let Some(v) = &l.visual {
            check_visual(&l.name, v)?;
        }
        links.push(Link {
            name: l.name.clone(),
            visual: l.visual.clone(),
            color: l.color.unwrap_or(DEFAULT_COLOR),
            parent,
        });
    }

    // Chains of revolute joints from the root to every link.
    let mut link_chain: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
    for &l in &link_order {
        link_chain[l] = match &links[l].parent {
            LinkParent::Root => Vec::new(),
            LinkParent::Joint(j) => {
                let mut c = link_chain[joints[*j].parent_link].clone();
                c.push(*j);
                c
            }
            LinkParent::Fixed { link, .. } => link_chain[*link].clone(),
        };
    }

    if doc.fingertips.is_empty() || doc.fingertips.len() > FINGER_NAMES.len() {
        return invalid(format!(
            "hand must declare 1 to 5 fingertips, found {}",
            doc.fingertips.len()
        ));
    }
    let mut fingertip_links = Vec::with_capacity(doc.fingertips.len());
    for f in &doc.fingertips {
        let Some(&l) = link_index.get(f.as_str()) else {
            return invalid(format!("fingertip `{f}` names an unknown link"));
        };
        if fingertip_links.contains(&l) {
            return invalid(format!("fingertip `{f}` listed twice"));
        }
        fingertip_links.push(l);
    }

    let full_dof = joints.len();
    let active_dof = joints.iter().filter(|j| !j.is_mimic()).count();
    if active_dof < 1 {
        return invalid("active_dof ≥ 1 required (hand has no independent revolute joint)");
    }

    let faas_map = build_faas_map(&doc, &joints, &revolute_index, &fingertip_links, &link_chain)?;

    let model = HandModel {
        name: doc.name,
        side: doc.side,
        links,
        joints,
        fingertip_links,
        faas_map,
        active_dof,
        full_dof,
        link_order,
        link_chain,
    };
    // Every master must keep its mimics reachable.
    for j in 0..model.full_dof {
        if !model.joints[j].is_mimic() && model.effective_limits_of(j).is_none() {
            return invalid(format!(
                "joint `{}` cannot move without pushing a mimic joint out of its limits",
                model.joints[j].name
            ));
        }
    }
    Ok(model)
}

fn check_finite_origin(name: &str, o: &XyzRpy) -> Result<(), HandModelError> {
    if o.xyz.iter().chain(o.rpy.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        invalid(format!("joint `{name}` has a non-finite origin"))
    }
}

fn check_visual(link: &str, v: &Visual) -> Result<(), HandModelError> {
    let ok = match v.shape {
        Shape::Sphere { radius } => radius > 0.0 && radius.is_finite(),
        Shape::Box { size } => size.iter().all(|s| *s > 0.0 && s.is_finite()),
        Shape::Capsule { radius, length } => {
            radius > 0.0 && length >= 0.0 && radius.is_finite() && length.is_finite()
        }
    };
    if ok {
        Ok(())
    } else {
        invalid(format!("link `{link}` has a degenerate visual primitive"))
    }
}

fn build_faas_map(
    doc: &HandDoc,
    joints: &[Joint],
    revolute_index: &HashMap<&str, usize>,
    fingertip_links: &[usize],
    link_chain: &[Vec<usize>],
) -> Result<FaasMap, HandModelError> {
    let mut slots: Vec<Option<u8>> = vec![None; joints.len()];
    let mut owner: BTreeMap<u8, &str> = BTreeMap::new();
    for (name, &slot) in &doc.faas_map {
        let Some(&j) = revolute_index.get(name.as_str()) else {
            return invalid(format!("faas_map names unknown revolute joint `{name}`"));
        };
        if !(0..SLOTS_PER_HAND as i64).contains(&slot) {
            return invalid(format!("faas_map slot {slot} for `{name}` outside 0..=31"));
        }
        let slot = slot as u8;
        if let Some(prev) = owner.insert(slot, name.as_str()) {
            return invalid(format!(
                "duplicate FAAS slot {slot} (`{prev}` and `{name}`)"
            ));
        }
        slots[j] = Some(slot);
    }
    let mut out = Vec::with_capacity(joints.len());
    for (j, s) in slots.iter().enumerate() {
        let Some(slot) = *s else {
            return invalid(format!("joint `{}` has no faas_map slot", joints[j].name));
        };
        // Fingers whose fingertip chain contains this joint.
        let fingers: Vec<usize> = fingertip_links
            .iter()
            .enumerate()
            .filter(|(_, &tip)| link_chain[tip].contains(&j))
            .map(|(f, _)| f)
            .collect();
        let in_extra = WRIST_EXTRA_SLOTS.contains(&slot) || HAND_EXTRA_SLOTS.contains(&slot);
        let ok = match fingers.as_slice() {
            [f] => {
                let lo = (f * SLOTS_PER_FINGER) as u8;
                (lo..lo + SLOTS_PER_FINGER as u8).contains(&slot) || HAND_EXTRA_SLOTS.contains(&slot)
            }
            _ => in_extra,
        };
        if !ok {
            let role = match fingers.as_slice() {
                [f] => format!("{} chain", FINGER_NAMES[*f]),
                _ => "non-finger joint".to_string(),
            };
            return invalid(format!(
                "joint `{}` ({role}) mapped to FAAS slot {slot} outside its block",
                joints[j].name
            ));
        }
        out.push(slot);
    }
    Ok(FaasMap {
        side: doc.side,
        slots: out,
    })
}

// ---------------------------------------------------------------------------
// Serialization

/// Serialize back to the hand-description format.
pub fn serialize_hand_model(model: &HandModel) -> String {
    serde_json::to_string_pretty(&to_doc(model)).expect("hand documents always serialize")
}

fn to_doc(model: &HandModel) -> HandDoc {
    let links = model
        .links
        .iter()
        .map(|l| LinkDoc {
            name: l.name.clone(),
            visual: l.visual.clone(),
            color: (l.color != DEFAULT_COLOR).then_some(l.color),
        })
        .collect();
    let mut joints: Vec<JointDoc> = Vec::new();
    for &l in &model.link_order {
        match &model.links[l].parent {
            LinkParent::Root => {}
            LinkParent::Joint(j) => {
                let j = &model.joints[*j];
                joints.push(JointDoc {
                    name: j.name.clone(),
                    kind: JointKind::Revolute,
                    parent: model.links[j.parent_link].name.clone(),
                    child: model.links[j.child_link].name.clone(),
                    origin: j.origin,
                    axis: Some([j.axis.x, j.axis.y, j.axis.z]),
                    limits: Some(j.limits),
                    mimic: j.mimic.map(|m| MimicDoc {
                        master: model.joints[m.master].name.clone(),
                        multiplier: m.multiplier,
                        offset: m.offset,
                    }),
                });
            }
            LinkParent::Fixed {
                joint_name,
                link,
                origin,
                ..
            } => joints.push(JointDoc {
                name: joint_name.clone(),
                kind: JointKind::Fixed,
                parent: model.links[*link].name.clone(),
                child: model.links[l].name.clone(),
                origin: *origin,
                axis: None,
                limits: None,
                mimic: None,
            }),
        }
    }
    HandDoc {
        name: model.name.clone(),
        side: model.side,
        links,
        joints,
        fingertips: model
            .fingertip_links
            .iter()
            .map(|&l| model.links[l].name.clone())
            .collect(),
        faas_map: model
            .joints
            .iter()
            .zip(&model.faas_map.slots)
            .map(|(j, &s)| (j.name.clone(), s as i64))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Queries

impl HandModel {
    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn fingertip_count(&self) -> usize {
        self.fingertip_links.len()
    }

    /// Indices of the independently commanded (non-mimic) joints.
    pub fn active_joints(&self) -> Vec<usize> {
        (0..self.full_dof).filter(|&j| !self.joints[j].is_mimic()).collect()
    }

    pub fn mimics_of(&self, master: usize) -> impl Iterator<Item = (usize, &MimicConstraint)> {
        self.joints.iter().enumerate().filter_map(move |(i, j)| {
            j.mimic.as_ref().filter(|m| m.master == master).map(|m| (i, m))
        })
    }

    /// Mid-range of every joint's limits, with mimic joints recomputed from their masters.
    pub fn mid_range(&self) -> Vec<f64> {
        let mut q: Vec<f64> = (0..self.full_dof)
            .map(|j| match self.effective_limits_of(j) {
                Some(l) if !self.joints[j].is_mimic() => l.mid(),
                _ => self.joints[j].limits.mid(),
            })
            .collect();
        for j in 0..self.full_dof {
            if let Some(m) = self.joints[j].mimic {
                q[j] = m.multiplier * q[m.master] + m.offset;
            }
        }
        q
    }

    /// Range of a master joint for which every mimic stays inside its own limits.
    /// For mimic joints this is just the declared range.
    pub fn effective_limits_of(&self, joint: usize) -> Option<Limits> {
        let mut lim = self.joints[joint].limits;
        if self.joints[joint].is_mimic() {
            return Some(lim);
        }
        for (s, m) in self.mimics_of(joint) {
            let sl = self.joints[s].limits;
            if m.multiplier == 0.0 {
                if !sl.contains(m.offset, 0.0) {
                    return None;
                }
                continue;
            }
            let a = (sl.lower - m.offset) / m.multiplier;
            let b = (sl.upper - m.offset) / m.multiplier;
            lim.lower = lim.lower.max(a.min(b));
            lim.upper = lim.upper.min(a.max(b));
        }
        (lim.lower <= lim.upper).then_some(lim)
    }

    /// Effective limits for every joint (see [`HandModel::effective_limits_of`]).
    pub fn effective_limits(&self) -> Vec<Limits> {
        (0..self.full_dof)
            .map(|j| {
                self.effective_limits_of(j)
                    .expect("validated at parse: every master keeps its mimics reachable")
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FingerSummary {
    pub finger: &'static str,
    pub fingertip: Option<String>,
    pub joints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandSummary {
    pub name: String,
    pub side: Side,
    pub fingers: Vec<FingerSummary>,
    pub wrist_extra_joints: usize,
    pub hand_extra_joints: usize,
    pub active_dof: usize,
    pub full_dof: usize,
    pub mimic_joints: usize,
    /// Bit `s` set when slot `s` is occupied.
    pub slot_occupancy: u32,
}

pub fn hand_summary(model: &HandModel) -> HandSummary {
    let slots = &model.faas_map.slots;
    let fingers = FINGER_NAMES
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let lo = (f * SLOTS_PER_FINGER) as u8;
            FingerSummary {
                finger: name,
                fingertip: model
                    .fingertip_links
                    .get(f)
                    .map(|&l| model.links[l].name.clone()),
                joints: slots
                    .iter()
                    .filter(|s| (lo..lo + SLOTS_PER_FINGER as u8).contains(s))
                    .count(),
            }
        })
        .collect();
    HandSummary {
        name: model.name.clone(),
        side: model.side,
        fingers,
        wrist_extra_joints: slots.iter().filter(|s| WRIST_EXTRA_SLOTS.contains(s)).count(),
        hand_extra_joints: slots.iter().filter(|s| HAND_EXTRA_SLOTS.contains(s)).count(),
        active_dof: model.active_dof,
        full_dof: model.full_dof,
        mimic_joints: model.full_dof - model.active_dof,
        slot_occupancy: model.faas_map.occupancy(),
    }
}
