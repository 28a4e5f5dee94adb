//! Shared domain types and the canonical landmark-row / state-column
//! encodings that make squared ranges bilinear.
//!
//! Conventions used throughout the crate:
//!
//! * a landmark row is `[ (mx^2+my^2)/2, mx, my, 1 ]`,
//! * a 4-dim robot state column is `[ 1, -x, -y, (x^2+y^2)/2 ]`,
//! * a 7-dim state column appends `[ -cos th, -sin th, w ]` with
//!   `w = (x'^2 - x^2 + y'^2 - y^2) / (2 v)` for the next position `(x', y')`,
//! * measurement-matrix entries carry the factor 1/2, so `Y = C X` holds
//!   exactly with `d^2 = 2 <C_n, X_t>`.
//!
//! The factor-of-two bookkeeping lives here and nowhere else: matrix
//! builders store `d^2/2` and the encodings above omit the half.
//!
//! Angles are stored raw and normalized to `(-pi, pi]` on read.

use nalgebra::{SVector, Vector4};

use crate::error::{Error, Result};

/// 7-dimensional robot state vector (heading-augmented encoding).
pub type StateVec = SVector<f64, 7>;

/// Velocity magnitudes below this make the rank-7 column undefined.
pub const VELOCITY_FLOOR: f64 = 1e-3;

/// Robot pose in the plane. `theta` is stored raw; use [`Pose::heading`]
/// for the normalized value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }

    /// Heading normalized to `(-pi, pi]`.
    pub fn heading(&self) -> f64 {
        normalize_angle(self.theta)
    }

    /// One step of the unicycle kinematics: translate `v` along the current
    /// heading, then rotate by `omega`.
    pub fn step(&self, v: f64, omega: f64) -> Pose {
        Pose {
            x: self.x + v * self.theta.cos(),
            y: self.y + v * self.theta.sin(),
            theta: self.theta + omega,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Fixed beacon with a unique id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

impl Landmark {
    pub fn new(id: u32, x: f64, y: f64) -> Self {
        Landmark { id, x, y }
    }
}

/// Timestamped range measurement to an identified landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeReading {
    pub time: f64,
    pub landmark_id: u32,
    pub range: f64,
}

/// Odometry over one interval: translation `v` and rotation `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryStep {
    pub time: f64,
    pub v: f64,
    pub omega: f64,
}

/// Normalize an angle to `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let a = (theta + std::f64::consts::PI).rem_euclid(two_pi);
    if a == 0.0 {
        std::f64::consts::PI
    } else {
        a - std::f64::consts::PI
    }
}

/// Landmark row `[ (mx^2+my^2)/2, mx, my, 1 ]`.
pub fn landmark_to_row(lm: &Landmark) -> Vector4<f64> {
    Vector4::new(0.5 * (lm.x * lm.x + lm.y * lm.y), lm.x, lm.y, 1.0)
}

/// Inverse of [`landmark_to_row`]; the id is supplied by the caller since
/// the row itself carries only geometry.
pub fn row_to_landmark(row: &Vector4<f64>, id: u32) -> Landmark {
    Landmark {
        id,
        x: row[1],
        y: row[2],
    }
}

/// 4-dim state column `[ 1, -x, -y, (x^2+y^2)/2 ]`.
pub fn pose_to_col4(pose: &Pose) -> Vector4<f64> {
    Vector4::new(
        1.0,
        -pose.x,
        -pose.y,
        0.5 * (pose.x * pose.x + pose.y * pose.y),
    )
}

/// 7-dim state column. The last element needs the next position and the
/// commanded translation `v` over the interval.
pub fn pose_to_col(pose: &Pose, next: &Pose, v: f64) -> Result<StateVec> {
    if v.abs() < VELOCITY_FLOOR {
        return Err(Error::VelocityTooSmall {
            v,
            floor: VELOCITY_FLOOR,
        });
    }
    let heading = pose.heading();
    let w = (next.x * next.x - pose.x * pose.x + next.y * next.y - pose.y * pose.y) / (2.0 * v);
    Ok(StateVec::from_column_slice(&[
        1.0,
        -pose.x,
        -pose.y,
        0.5 * (pose.x * pose.x + pose.y * pose.y),
        -heading.cos(),
        -heading.sin(),
        w,
    ]))
}

/// Squared distance between a landmark and a robot position.
pub fn squared_range(lm: &Landmark, pose: &Pose) -> f64 {
    let dx = lm.x - pose.x;
    let dy = lm.y - pose.y;
    dx * dx + dy * dy
}
