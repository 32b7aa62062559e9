//! Three-joint leg kinematics for a Mini-Cheetah-like quadruped.
//!
//! Chain: abduction about body x, then a lateral offset, then hip flexion
//! about y, thigh, knee flexion about y, shank, point foot. At zero angles the
//! leg hangs straight down.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::liegroup::Rotation;

/// Margin kept away from the workspace boundary by [`ik_position`].
pub const REACH_MARGIN: f64 = 1e-6;

/// Per-leg joint triple `(abduction, hip, knee)` in radians.
pub type JointAngles = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("foot target {target:?} unreachable (planar distance {distance:.6} m outside [{min:.6}, {max:.6}])")]
    Unreachable { target: [f64; 3], distance: f64, min: f64, max: f64 },
}

/// Leg order used throughout the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Leg {
    RF = 0,
    LF = 1,
    RH = 2,
    LH = 3,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::RF, Leg::LF, Leg::RH, Leg::LH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::RF => "RF",
            Leg::LF => "LF",
            Leg::RH => "RH",
            Leg::LH => "LH",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    /// Lateral abduction offset (m).
    pub abd: f64,
    /// Thigh length (m).
    pub l1: f64,
    /// Shank length (m).
    pub l2: f64,
    /// Hip position in the body frame (m).
    pub hip: Vector3<f64>,
    /// +1 for left legs, -1 for right legs.
    pub lateral_sign: f64,
}

impl LegGeometry {
    pub fn new(abd: f64, l1: f64, l2: f64, hip: Vector3<f64>, lateral_sign: f64) -> Self {
        assert!(l1 > 0.0 && l2 > 0.0, "link lengths must be positive");
        Self { abd, l1, l2, hip, lateral_sign }
    }

    /// Foot position relative to the hip, in body axes.
    pub fn hip_relative(&self, alpha: &JointAngles) -> Vector3<f64> {
        fk_position(self, alpha) - self.hip
    }
}

/// Geometry of the whole robot, one entry per leg in [`Leg`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotGeometry {
    pub legs: Vec<LegGeometry>,
}

impl RobotGeometry {
    /// Mini-Cheetah-scale defaults.
    pub fn mini_cheetah() -> Self {
        Self::quadruped(0.062, 0.209, 0.195, 0.19, 0.049)
    }

    pub fn quadruped(abd: f64, l1: f64, l2: f64, hip_x: f64, hip_y: f64) -> Self {
        let legs = Leg::ALL
            .iter()
            .map(|leg| {
                let (sx, sy) = match leg {
                    Leg::RF => (1.0, -1.0),
                    Leg::LF => (1.0, 1.0),
                    Leg::RH => (-1.0, -1.0),
                    Leg::LH => (-1.0, 1.0),
                };
                LegGeometry::new(abd, l1, l2, Vector3::new(sx * hip_x, sy * hip_y, 0.0), sy)
            })
            .collect();
        Self { legs }
    }

    pub fn n_legs(&self) -> usize {
        self.legs.len()
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_x_deriv(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Foot position in the abduction frame, before the abduction rotation.
fn sagittal_point(geom: &LegGeometry, alpha: &JointAngles) -> Vector3<f64> {
    let (s1, c1) = alpha[1].sin_cos();
    let (s12, c12) = (alpha[1] + alpha[2]).sin_cos();
    Vector3::new(-geom.l1 * s1 - geom.l2 * s12, geom.lateral_sign * geom.abd, -geom.l1 * c1 - geom.l2 * c12)
}

/// Foot position in the body frame.
pub fn fk_position(geom: &LegGeometry, alpha: &JointAngles) -> Vector3<f64> {
    geom.hip + rot_x(alpha[0]) * sagittal_point(geom, alpha)
}

/// Analytic Jacobian `∂fk_position/∂α`.
pub fn fk_jacobian(geom: &LegGeometry, alpha: &JointAngles) -> Matrix3<f64> {
    let (s1, c1) = alpha[1].sin_cos();
    let (s12, c12) = (alpha[1] + alpha[2]).sin_cos();
    let rx = rot_x(alpha[0]);
    let d_abd = rot_x_deriv(alpha[0]) * sagittal_point(geom, alpha);
    let d_hip = rx * Vector3::new(-geom.l1 * c1 - geom.l2 * c12, 0.0, geom.l1 * s1 + geom.l2 * s12);
    let d_knee = rx * Vector3::new(-geom.l2 * c12, 0.0, geom.l2 * s12);
    Matrix3::from_columns(&[d_abd, d_hip, d_knee])
}

/// Orientation of the foot frame in the body frame.
pub fn fk_orientation(_geom: &LegGeometry, alpha: &JointAngles) -> Rotation {
    rot_x(alpha[0]) * rot_y(alpha[1]) * rot_y(alpha[2])
}

/// Foot velocity relative to the body, `J(α)·α̇`.
pub fn foot_velocity(geom: &LegGeometry, alpha: &JointAngles, alpha_dot: &JointAngles) -> Vector3<f64> {
    fk_jacobian(geom, alpha) * alpha_dot
}

/// Inverse kinematics on the knee-backward branch (`knee ∈ (-π, 0]`).
pub fn ik_position(geom: &LegGeometry, target: &Vector3<f64>) -> Result<JointAngles, KinematicsError> {
    let r = target - geom.hip;
    let min = (geom.l1 - geom.l2).abs() + REACH_MARGIN;
    let max = geom.l1 + geom.l2 - REACH_MARGIN;
    let unreachable = |distance: f64| KinematicsError::Unreachable { target: [target.x, target.y, target.z], distance, min, max };

    // Remove abduction: the lateral offset and planar height span the y-z radius.
    let yz2 = r.y * r.y + r.z * r.z;
    let planar_z2 = yz2 - geom.abd * geom.abd;
    if planar_z2 < 0.0 {
        return Err(unreachable(r.x.abs()));
    }
    let planar_z = -planar_z2.sqrt();
    let abduction = r.z.atan2(r.y) - planar_z.atan2(geom.lateral_sign * geom.abd);
    let abduction = wrap_angle(abduction);

    let x = r.x;
    let distance = (x * x + planar_z * planar_z).sqrt();
    if !(min..=max).contains(&distance) {
        return Err(unreachable(distance));
    }
    let cos_knee = ((distance * distance - geom.l1 * geom.l1 - geom.l2 * geom.l2) / (2.0 * geom.l1 * geom.l2)).clamp(-1.0, 1.0);
    let mut knee = -cos_knee.acos();
    if knee == 0.0 {
        knee = 0.0;
    }
    let k1 = geom.l1 + geom.l2 * knee.cos();
    let k2 = geom.l2 * knee.sin();
    let hip = (-x).atan2(-planar_z) - k2.atan2(k1);
    Ok(Vector3::new(abduction, wrap_angle(hip), knee))
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = a % two_pi;
    if a > std::f64::consts::PI {
        a -= two_pi;
    } else if a <= -std::f64::consts::PI {
        a += two_pi;
    }
    a
}
