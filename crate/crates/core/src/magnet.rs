//! Field intensity of spherical and cuboid permanent magnets.
//!
//! Both shapes are magnetized along their own +z axis. Points are given in the
//! magnet frame (see [`crate::geometry`]): the sphere is centered at the
//! origin, the cuboid occupies `[0, l] x [0, w] x [0, h]`.
//!
//! Every regularizing denominator and logarithm carries the same small
//! constant [`EPSILON`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::{to_magnet_frame, MagnetPose, Vec3};
use crate::quadrature::GaussLegendre;

/// Regularizer used in every denominator and logarithm of the field formulas.
pub const EPSILON: f64 = 1e-7;

/// Default magnetization. Only the field's shape matters to the reward, so
/// the magnitude is fixed at 4π for every magnet.
pub const DEFAULT_MAGNETIZATION: f64 = 4.0 * PI;

/// Default nodes per axis for the sphere's surface integral.
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalMagnet {
    pub radius: f64,
    pub magnetization: f64,
    pub pose: MagnetPose,
}

impl SphericalMagnet {
    pub fn new(radius: f64, magnetization: f64, pose: MagnetPose) -> Result<Self> {
        ensure_finite("sphere parameters", &[radius, magnetization])?;
        if radius <= 0.0 || magnetization <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sphere radius and magnetization must be positive, got {radius} and {magnetization}"
            )));
        }
        Ok(SphericalMagnet { radius, magnetization, pose })
    }

    /// Sphere of the given radius at the origin of the environment frame.
    pub fn centered(radius: f64) -> Result<Self> {
        SphericalMagnet::new(radius, DEFAULT_MAGNETIZATION, MagnetPose::IDENTITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuboidMagnet {
    /// Extent along x.
    pub length: f64,
    /// Extent along y.
    pub width: f64,
    /// Extent along z, the magnetization axis.
    pub height: f64,
    pub magnetization: f64,
    pub pose: MagnetPose,
}

impl CuboidMagnet {
    pub fn new(length: f64, width: f64, height: f64, magnetization: f64, pose: MagnetPose) -> Result<Self> {
        ensure_finite("cuboid parameters", &[length, width, height, magnetization])?;
        if length <= 0.0 || width <= 0.0 || height <= 0.0 || magnetization <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cuboid extents and magnetization must be positive, got {length}x{width}x{height}, M={magnetization}"
            )));
        }
        Ok(CuboidMagnet { length, width, height, magnetization, pose })
    }

    /// Box center in its own magnet frame.
    pub fn center_offset(&self) -> Vec3 {
        Vec3::new(0.5 * self.length, 0.5 * self.width, 0.5 * self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Magnet {
    Sphere(SphericalMagnet),
    Cuboid(CuboidMagnet),
}

impl Magnet {
    pub fn pose(&self) -> &MagnetPose {
        match self {
            Magnet::Sphere(s) => &s.pose,
            Magnet::Cuboid(c) => &c.pose,
        }
    }

    pub fn set_pose(&mut self, pose: MagnetPose) {
        match self {
            Magnet::Sphere(s) => s.pose = pose,
            Magnet::Cuboid(c) => c.pose = pose,
        }
    }

    /// Whether a magnet-frame point lies in the closed magnet body.
    pub fn contains_local(&self, p: Vec3) -> bool {
        match self {
            Magnet::Sphere(s) => p.norm() <= s.radius,
            Magnet::Cuboid(c) => {
                (0.0..=c.length).contains(&p.x) && (0.0..=c.width).contains(&p.y) && (0.0..=c.height).contains(&p.z)
            }
        }
    }

    /// Radius of a ball about the body's reference point that encloses it.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Magnet::Sphere(s) => s.radius,
            Magnet::Cuboid(c) => c.center_offset().norm(),
        }
    }
}

/// Node tables for the sphere's double integral over `θ₀ ∈ [0, π]`, `φ₀ ∈ [0, 2π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    theta_nodes: usize,
    phi_nodes: usize,
    theta: Vec<ThetaNode>,
    phi: Vec<PhiNode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ThetaNode {
    weight: f64,
    cos: f64,
    sin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PhiNode {
    weight: f64,
    cos: f64,
    sin: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::new(DEFAULT_QUADRATURE_NODES, DEFAULT_QUADRATURE_NODES).expect("default rule is valid")
    }
}

impl QuadratureSpec {
    pub fn new(theta_nodes: usize, phi_nodes: usize) -> Result<Self> {
        let (tx, tw) = GaussLegendre::new(theta_nodes)?.on_interval(0.0, PI);
        let (px, pw) = GaussLegendre::new(phi_nodes)?.on_interval(0.0, 2.0 * PI);
        let theta = tx.iter().zip(&tw).map(|(&t, &w)| ThetaNode { weight: w, cos: t.cos(), sin: t.sin() }).collect();
        let phi = px.iter().zip(&pw).map(|(&p, &w)| PhiNode { weight: w, cos: p.cos(), sin: p.sin() }).collect();
        Ok(QuadratureSpec { theta_nodes, phi_nodes, theta, phi })
    }

    pub fn square(nodes: usize) -> Result<Self> {
        QuadratureSpec::new(nodes, nodes)
    }

    pub fn theta_nodes(&self) -> usize {
        self.theta_nodes
    }

    pub fn phi_nodes(&self) -> usize {
        self.phi_nodes
    }
}

/// Everything the intensity functions need besides the magnet itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSettings {
    pub quadrature: QuadratureSpec,
    pub epsilon: f64,
}

impl Default for FieldSettings {
    fn default() -> Self {
        FieldSettings { quadrature: QuadratureSpec::default(), epsilon: EPSILON }
    }
}

impl FieldSettings {
    pub fn with_nodes(nodes: usize) -> Result<Self> {
        Ok(FieldSettings { quadrature: QuadratureSpec::square(nodes)?, epsilon: EPSILON })
    }
}

/// Radius, inclination and azimuth of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoords {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

/// Regularized Cartesian → spherical conversion.
///
/// The azimuth uses the single-argument arctangent, so it folds the left
/// half-plane onto the right one and lies in `[-π/2, π/2]`. Intensities only
/// depend on the field norm, which is unchanged by that fold for an
/// axisymmetric magnet.
pub fn cartesian_to_spherical(p: Vec3, eps: f64) -> SphericalCoords {
    let r = p.norm();
    let theta = (p.z / (r + eps)).clamp(-1.0, 1.0).acos();
    let q = p.y / (p.x + eps);
    let phi = if q.is_nan() { 0.0 } else { q.atan() };
    SphericalCoords { r, theta, phi }
}

/// Field vector of a uniformly magnetized sphere, from its equivalent surface
/// current `M sin θ₀` integrated over the sphere by Gauss–Legendre quadrature.
pub fn sphere_field(m: &SphericalMagnet, p_mag: Vec3, q: &QuadratureSpec, eps: f64) -> Vec3 {
    let a = m.radius;
    let SphericalCoords { r, theta, phi } = cartesian_to_spherical(p_mag, eps);
    let (sin_ts, cos_ts) = theta.sin_cos();
    let (sin_ps, cos_ps) = phi.sin_cos();
    let (mut hx, mut hy, mut hz) = (0.0, 0.0, 0.0);
    for t in &q.theta {
        let base = r * r + a * a - 2.0 * a * r * cos_ts * t.cos;
        let cross = 2.0 * a * r * sin_ts * t.sin;
        let area = t.weight * a * a * t.sin * t.sin;
        let radial = r * cos_ts - a * t.cos;
        let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
        for f in &q.phi {
            let cos_delta = cos_ps * f.cos + sin_ps * f.sin;
            let d2 = (base - cross * cos_delta).max(0.0);
            let inv = f.weight / (d2 * d2.sqrt() + eps);
            sx += inv * f.cos;
            sy += inv * f.sin;
            sz += inv * (a * t.sin - r * sin_ts * cos_delta);
        }
        hx += area * radial * sx;
        hy += area * radial * sy;
        hz += area * sz;
    }
    Vec3::new(hx, hy, hz) * (m.magnetization / (4.0 * PI))
}

/// Field intensity of a sphere at a magnet-frame point.
pub fn sphere_intensity(m: &SphericalMagnet, p_mag: Vec3, q: &QuadratureSpec) -> Result<f64> {
    p_mag.check_finite("point")?;
    Ok(sphere_field(m, p_mag, q, EPSILON).norm())
}

/// Closed-form intensity on the sphere's magnetization axis: `2 M r³ / (3 |z|³)`
/// outside the body and `M / 3` inside.
pub fn axial_sphere_intensity(m: &SphericalMagnet, z: f64) -> f64 {
    let a = m.radius;
    let z = z.abs();
    if z >= a {
        2.0 * m.magnetization * a.powi(3) / (3.0 * z.powi(3))
    } else {
        m.magnetization / 3.0
    }
}

/// Log auxiliary, evaluated at `z₀ = h` minus `z₀ = 0`.
fn gamma_aux(g1: f64, g2: f64, g3: f64, h: f64, eps: f64) -> f64 {
    let at = |z0: f64| {
        let dz = g3 - z0;
        let r = (g1 * g1 + g2 * g2 + dz * dz).sqrt();
        ((r - g2) / (r + g2 + eps) + eps).max(eps).ln()
    };
    at(h) - at(0.0)
}

/// Arctangent auxiliary, evaluated at `z₀ = h` minus `z₀ = 0`.
fn psi_aux(p1: f64, p2: f64, p3: f64, h: f64, eps: f64) -> f64 {
    let at = |z0: f64| {
        let dz = p3 - z0;
        let r = (p1 * p1 + p2 * p2 + dz * dz).sqrt();
        (p1 * dz / (p2 * r + eps)).atan()
    };
    at(h) - at(0.0)
}

/// Field vector of a z-magnetized cuboid in closed form.
///
/// The eight arctangent terms of `H_z` pair up into one solid-angle term per
/// corner rectangle, so `H_z` carries the prefactor `M / 4π`; the log terms of
/// `H_x`, `H_y` are doubled inside the ratio and carry `M / 8π`.
pub fn cuboid_field(m: &CuboidMagnet, p_mag: Vec3, eps: f64) -> Vec3 {
    let (l, w, h) = (m.length, m.width, m.height);
    let Vec3 { x, y, z } = p_mag;
    let g = |a, b| gamma_aux(a, b, z, h, eps);
    let s = |a, b| psi_aux(a, b, z, h, eps);
    let hx = g(l - x, w - y) + g(l - x, y) - g(x, w - y) - g(x, y);
    let hy = g(w - y, l - x) + g(w - y, x) - g(y, l - x) - g(y, x);
    let hz = s(w - y, l - x)
        + s(y, l - x)
        + s(l - x, w - y)
        + s(x, w - y)
        + s(w - y, x)
        + s(y, x)
        + s(l - x, y)
        + s(x, y);
    let k = -m.magnetization / (8.0 * PI);
    Vec3::new(k * hx, k * hy, 2.0 * k * hz)
}

/// Field intensity of a cuboid at a magnet-frame point.
pub fn cuboid_intensity(m: &CuboidMagnet, p_mag: Vec3, eps: f64) -> Result<f64> {
    p_mag.check_finite("point")?;
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    Ok(cuboid_field(m, p_mag, eps).norm())
}

/// Intensity of `magnet` at an environment-frame point.
pub fn intensity_at(magnet: &Magnet, p_env: Vec3, settings: &FieldSettings) -> Result<f64> {
    let local = to_magnet_frame(p_env, magnet.pose())?;
    match magnet {
        Magnet::Sphere(s) => Ok(sphere_field(s, local, &settings.quadrature, settings.epsilon).norm()),
        Magnet::Cuboid(c) => cuboid_intensity(c, local, settings.epsilon),
    }
}

/// Field vector of `magnet` at an environment-frame point, in environment axes.
pub fn field_at(magnet: &Magnet, p_env: Vec3, settings: &FieldSettings) -> Result<Vec3> {
    let local = to_magnet_frame(p_env, magnet.pose())?;
    let h = match magnet {
        Magnet::Sphere(s) => sphere_field(s, local, &settings.quadrature, settings.epsilon),
        Magnet::Cuboid(c) => cuboid_field(c, local, settings.epsilon),
    };
    Ok(magnet.pose().rotation().transpose().apply(h))
}
