mod support {
    pub mod surface_charge;
}

use mfrs::geometry::{MagnetPose, Vec3};
use mfrs::magnet::{cuboid_field, CuboidMagnet, EPSILON};
use support::surface_charge;

fn rel(a: Vec3, b: [f64; 3]) -> f64 {
    let b = Vec3::new(b[0], b[1], b[2]);
    (a - b).norm() / b.norm()
}

// With the regularizer pushed to the smallest normal float the closed form is exact.
#[test]
fn unregularized_cuboid_matches_surface_charge_quadrature() {
    let (l, w, h) = (0.1, 0.4, 0.05);
    let m = CuboidMagnet::new(l, w, h, 4.0 * std::f64::consts::PI, MagnetPose::IDENTITY).unwrap();
    for p in surface_charge::exterior_points(l, w, h, 200) {
        let oracle = surface_charge::cuboid_field(l, w, h, m.magnetization, p, 64);
        let got = cuboid_field(&m, Vec3::new(p[0], p[1], p[2]), f64::MIN_POSITIVE);
        assert!(rel(got, oracle) < 1e-8, "{p:?}: {got:?} vs {oracle:?}");
    }
}

// The production regularizer is felt near the lines extending the box edges,
// where the logarithm's argument is tiny.
#[test]
fn regularizer_error_is_local() {
    let (l, w, h) = (0.1, 0.4, 0.05);
    let m = CuboidMagnet::new(l, w, h, 4.0 * std::f64::consts::PI, MagnetPose::IDENTITY).unwrap();
    let pts = surface_charge::exterior_points(l, w, h, 2000);
    let off = pts
        .iter()
        .filter(|p| {
            let q = Vec3::new(p[0], p[1], p[2]);
            let a = cuboid_field(&m, q, EPSILON);
            let b = cuboid_field(&m, q, f64::MIN_POSITIVE);
            (a - b).norm() / b.norm() > 1e-3
        })
        .count();
    assert!(off < pts.len() / 50, "{off} of {} points off by more than 0.1%", pts.len());
    // above the top face the regularizer is invisible
    let top = Vec3::new(0.5 * l, 0.5 * w, 1.1 * h);
    let exact = surface_charge::cuboid_field(l, w, h, m.magnetization, [top.x, top.y, top.z], 64);
    assert!(rel(cuboid_field(&m, top, EPSILON), exact) < 1e-5);
}

#[test]
fn oracle_is_converged() {
    let (l, w, h) = (0.03, 0.045, 0.02);
    for p in surface_charge::exterior_points(l, w, h, 5) {
        let a = surface_charge::cuboid_field(l, w, h, 1.0, p, 32);
        let b = surface_charge::cuboid_field(l, w, h, 1.0, p, 64);
        let d = Vec3::new(a[0] - b[0], a[1] - b[1], a[2] - b[2]).norm();
        assert!(d / Vec3::new(b[0], b[1], b[2]).norm() < 1e-8);
    }
}

#[test]
fn other_box_shapes_match_too() {
    let (l, w, h) = (0.038, 0.047, 0.12);
    let m = CuboidMagnet::new(l, w, h, 1.0, MagnetPose::IDENTITY).unwrap();
    for p in surface_charge::exterior_points(l, w, h, 10) {
        let oracle = surface_charge::cuboid_field(l, w, h, 1.0, p, 64);
        let got = cuboid_field(&m, Vec3::new(p[0], p[1], p[2]), f64::MIN_POSITIVE);
        assert!(rel(got, oracle) < 1e-8, "{p:?}: {got:?} vs {oracle:?}");
    }
}
