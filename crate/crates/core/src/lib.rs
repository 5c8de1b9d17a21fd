//! Turning recorded human hand–object interaction into robot-executable dexterous-hand
//! trajectories.
//!
//! - [`handmodel`]: hand descriptions (kinematic tree, mimic joints, action-slot map)
//! - [`kinematics`]: forward kinematics with an adjustable base offset, fingertip Jacobians
//! - [`retarget`]: fingertip IK, mimic correction, trajectory retargeting, frame alignment
//! - [`faas`]: the 82-dim function–actuator–aligned action vector and action chunks
//! - [`pointcloud`]: RGB-D unprojection, hand masking, robot-hand rendering, reprojection
//! - [`flowmatch`]: conditional flow-matching loss, Euler sampler and a small trainable MLP
//! - [`dataset`]: trajectory shards, chunking, motion downsampling, co-training mixer
//! - [`session`]: the interactive calibration session behind the retargeting GUI

pub mod dataset;
pub mod faas;
pub mod fixtures;
pub mod flowmatch;
pub mod handmodel;
pub mod kinematics;
pub mod pointcloud;
pub mod pose;
pub mod retarget;
pub mod session;

pub use handmodel::{HandModel, Side};
pub use kinematics::{FingertipSet, JointState};
pub use pose::Pose;
