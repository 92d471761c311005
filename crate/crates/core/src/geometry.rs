//! Rigid transforms between the environment frame and a magnet's field frame.
//!
//! A point in the environment frame maps into a magnet frame as
//! `p_mag = Rx(θx) · Ry(θy) · Rz(θz) · p_env + T`, rotation first, then
//! translation. Positive angles follow the right-hand rule.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// A point or displacement in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub(crate) fn check_finite(self, what: &str) -> Result<()> {
        ensure_finite(what, &self.to_array())
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Mat3) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        worst
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }
}

/// Rotation about the x axis.
pub fn rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
}

/// Rotation about the y axis.
pub fn rot_y(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
}

/// Rotation about the z axis.
pub fn rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; this catches the float edge at exactly 2π
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// `Rx(θx) · Ry(θy) · Rz(θz)`, in that order.
pub fn rotation_matrix(angles: [f64; 3]) -> Result<Mat3> {
    ensure_finite("rotation angles", &angles)?;
    Ok(rot_x(angles[0]) * rot_y(angles[1]) * rot_z(angles[2]))
}

/// Recovers `[θx, θy, θz]` such that `rotation_matrix(angles) == m` for a
/// proper rotation `m`. At gimbal lock (`|θy| = π/2`) the z angle is set to 0.
pub fn angles_from_matrix(m: &Mat3) -> [f64; 3] {
    let r = &m.0;
    let sy = r[0][2].clamp(-1.0, 1.0);
    let ty = sy.asin();
    let cy = (r[0][0] * r[0][0] + r[0][1] * r[0][1]).sqrt();
    if cy > 1e-12 {
        let tx = (-r[1][2]).atan2(r[2][2]);
        let tz = (-r[0][1]).atan2(r[0][0]);
        [wrap_angle(tx), wrap_angle(ty), wrap_angle(tz)]
    } else {
        // With θz = 0 the second column is (0, cos θx, sin θx).
        let tx = r[2][1].atan2(r[1][1]);
        [wrap_angle(tx), wrap_angle(ty), 0.0]
    }
}

/// Rigid placement of a magnet's field frame: `p_mag = R(angles) · p_env + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetPose {
    translation: Vec3,
    angles: [f64; 3],
}

impl Default for MagnetPose {
    fn default() -> Self {
        MagnetPose::IDENTITY
    }
}

impl MagnetPose {
    pub const IDENTITY: MagnetPose = MagnetPose { translation: Vec3::ZERO, angles: [0.0; 3] };

    pub fn new(translation: Vec3, angles: [f64; 3]) -> Result<Self> {
        translation.check_finite("pose translation")?;
        ensure_finite("pose angles", &angles)?;
        Ok(MagnetPose { translation, angles: angles.map(wrap_angle) })
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// Angles in `(-π, π]`.
    pub fn angles(&self) -> [f64; 3] {
        self.angles
    }

    pub fn rotation(&self) -> Mat3 {
        rot_x(self.angles[0]) * rot_y(self.angles[1]) * rot_z(self.angles[2])
    }

    /// Pose for a magnet body whose reference point sits at `center` in the
    /// environment frame and whose body axes are rotated by `body_angles`
    /// (body → environment). `anchor` is the reference point's coordinates in
    /// the magnet frame: the origin for a sphere, the box center for a cuboid.
    pub fn from_body(center: Vec3, body_angles: [f64; 3], anchor: Vec3) -> Result<Self> {
        center.check_finite("body center")?;
        anchor.check_finite("body anchor")?;
        let to_magnet = rotation_matrix(body_angles)?.transpose();
        let angles = angles_from_matrix(&to_magnet);
        // Recompose from the recovered angles so the stored pose is self-consistent.
        let rot = rotation_matrix(angles)?;
        MagnetPose::new(anchor - rot.apply(center), angles)
    }
}

/// Maps an environment-frame point into the magnet frame.
pub fn to_magnet_frame(p_env: Vec3, pose: &MagnetPose) -> Result<Vec3> {
    p_env.check_finite("point")?;
    Ok(pose.rotation().apply(p_env) + pose.translation)
}

/// Inverse of [`to_magnet_frame`].
pub fn from_magnet_frame(p_mag: Vec3, pose: &MagnetPose) -> Result<Vec3> {
    p_mag.check_finite("point")?;
    Ok(pose.rotation().transpose().apply(p_mag - pose.translation))
}

/// Angles whose rotation carries the +z axis onto the unit vector pointing
/// from `magnet_position` to `focus`. Roll about that axis is fixed by θz = 0.
pub fn align_magnetization_toward(magnet_position: Vec3, focus: Vec3) -> Result<[f64; 3]> {
    magnet_position.check_finite("magnet position")?;
    focus.check_finite("focus")?;
    let d = focus - magnet_position;
    let n = d.norm();
    if n <= 1e-9 {
        return Err(Error::DegenerateDirection(magnet_position.to_array(), focus.to_array()));
    }
    let d = d * (1.0 / n);
    // Rx(a)·Ry(b)·ẑ = (sin b, -sin a cos b, cos a cos b)
    let b = d.x.clamp(-1.0, 1.0).asin();
    let a = if b.cos() > 1e-12 { (-d.y).atan2(d.z) } else { 0.0 };
    Ok([wrap_angle(a), wrap_angle(b), 0.0])
}
