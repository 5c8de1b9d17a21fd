//! Rigid transforms in SE(3), stored as a rotation matrix plus a translation.

use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform. Lengths are meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Fixed-axis roll/pitch/yaw, `R = Rz(yaw) * Ry(pitch) * Rx(roll)` (URDF convention).
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let r = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Self {
            rotation: *r.matrix(),
            translation: Vector3::from(xyz),
        }
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_unchecked(*axis), angle);
        Self {
            rotation: *r.matrix(),
            translation: Vector3::zeros(),
        }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn rpy(&self) -> [f64; 3] {
        let (r, p, y) = Rotation3::from_matrix_unchecked(self.rotation).euler_angles();
        [r, p, y]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from +1.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let g = gram.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        g.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.orthonormality_error() <= tol
    }

    /// Largest absolute entry difference between the two transforms.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dr = (self.rotation - other.rotation).amax();
        let dt = (self.translation - other.translation).amax();
        dr.max(dt)
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        &self * &rhs
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

/// `{ "xyz": [..], "rpy": [..] }`, the on-disk form of a pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct XyzRpy {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl XyzRpy {
    pub fn to_pose(&self) -> Pose {
        Pose::from_xyz_rpy(self.xyz, self.rpy)
    }
}

impl From<&Pose> for XyzRpy {
    fn from(p: &Pose) -> Self {
        Self {
            xyz: p.xyz(),
            rpy: p.rpy(),
        }
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        XyzRpy::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(XyzRpy::deserialize(d)?.to_pose())
    }
}
