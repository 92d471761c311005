//! Distance-based comparison shapers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::reward::GoalLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShaperKind {
    /// Environment reward only.
    Ns,
    /// Fixed state potential built from distances.
    #[serde(alias = "pbrs")]
    PbrsDist,
    /// Learned potential whose objective reward is the distance expression.
    #[serde(alias = "dpba")]
    DpbaDist,
    /// Learned potential whose objective reward is the magnetic reward.
    Mfrs,
}

impl ShaperKind {
    pub const ALL: [ShaperKind; 4] = [ShaperKind::Ns, ShaperKind::PbrsDist, ShaperKind::DpbaDist, ShaperKind::Mfrs];

    pub fn name(self) -> &'static str {
        match self {
            ShaperKind::Ns => "ns",
            ShaperKind::PbrsDist => "pbrs",
            ShaperKind::DpbaDist => "dpba",
            ShaperKind::Mfrs => "mfrs",
        }
    }

    /// Uses the learned action-dependent potential.
    pub fn learns_potential(self) -> bool {
        matches!(self, ShaperKind::DpbaDist | ShaperKind::Mfrs)
    }
}

impl std::fmt::Display for ShaperKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShaperKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ns" | "none" => Ok(ShaperKind::Ns),
            "pbrs" | "pbrs_dist" => Ok(ShaperKind::PbrsDist),
            "dpba" | "dpba_dist" => Ok(ShaperKind::DpbaDist),
            "mfrs" => Ok(ShaperKind::Mfrs),
            _ => Err(Error::InvalidArgument(format!("unknown shaper {s:?}"))),
        }
    }
}

/// `-d(agent, target) + mean_i d(agent, obstacle_i)`, with an empty mean taken as zero.
pub fn distance_objective(agent: Vec3, layout: &GoalLayout) -> f64 {
    let to_target = agent.distance(layout.target.position);
    if layout.obstacles.is_empty() {
        return -to_target;
    }
    let mean = layout.obstacles.iter().map(|o| agent.distance(o.position)).sum::<f64>() / layout.obstacles.len() as f64;
    -to_target + mean
}

/// State-only potential used by the fixed potential-based baseline.
pub fn pbrs_potential(agent: Vec3, layout: &GoalLayout) -> f64 {
    distance_objective(agent, layout)
}

/// `γΦ(s') - Φ(s)`; a terminal `s'` has potential zero.
pub fn pbrs_shaping(agent: Vec3, next: Vec3, layout: &GoalLayout, gamma: f64, terminal: bool) -> f64 {
    let next_phi = if terminal { 0.0 } else { pbrs_potential(next, layout) };
    gamma * next_phi - pbrs_potential(agent, layout)
}

/// Objective reward for the learned-potential baseline; same expression as [`pbrs_potential`].
pub fn dpba_distance_reward(agent: Vec3, layout: &GoalLayout) -> f64 {
    distance_objective(agent, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MagnetPose;
    use crate::magnet::{Magnet, SphericalMagnet};
    use crate::reward::GoalSite;
    use proptest::prelude::*;

    fn site(p: Vec3) -> GoalSite {
        let pose = MagnetPose::from_body(p, [0.0; 3], Vec3::ZERO).unwrap();
        GoalSite { position: p, magnet: Magnet::Sphere(SphericalMagnet::new(0.02, 1.0, pose).unwrap()) }
    }

    fn layout(target: Vec3, obstacles: &[Vec3]) -> GoalLayout {
        GoalLayout { target: site(target), obstacles: obstacles.iter().map(|&p| site(p)).collect() }
    }

    #[test]
    fn potential_examples() {
        let l = layout(Vec3::ZERO, &[Vec3::new(1.0, 0.0, 0.0)]);
        assert_eq!(pbrs_potential(Vec3::ZERO, &l), 1.0);
        let l = layout(Vec3::new(0.3, 0.4, 0.0), &[]);
        assert!((pbrs_potential(Vec3::ZERO, &l) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn shaping_examples() {
        let l = layout(Vec3::new(1.0, 0.0, 0.0), &[]);
        let p = Vec3::new(0.2, 0.1, 0.0);
        assert_eq!(pbrs_shaping(p, p, &l, 1.0, false), 0.0);
        assert!(pbrs_shaping(p, Vec3::new(0.3, 0.1, 0.0), &l, 1.0, false) > 0.0);
        assert_eq!(pbrs_shaping(p, Vec3::new(0.3, 0.1, 0.0), &l, 0.0, false), -pbrs_potential(p, &l));
        assert_eq!(pbrs_shaping(p, Vec3::new(0.3, 0.1, 0.0), &l, 0.99, true), -pbrs_potential(p, &l));
    }

    #[test]
    fn dpba_reward_examples() {
        let l = layout(Vec3::new(1.0, 0.0, 0.0), &[Vec3::new(-1.0, 0.0, 0.0)]);
        assert_eq!(dpba_distance_reward(Vec3::ZERO, &l), 0.0);
        let p = Vec3::new(0.1, 0.5, 0.0);
        assert_eq!(dpba_distance_reward(p, &l), pbrs_potential(p, &l));
        // retreating from the obstacle on a circle around the target
        let l = layout(Vec3::ZERO, &[Vec3::new(-1.0, 0.0, 0.0)]);
        let a = dpba_distance_reward(Vec3::new(0.0, 0.5, 0.0), &l);
        let b = dpba_distance_reward(Vec3::new(0.5, 0.0, 0.0), &l);
        assert!(b > a);
    }

    #[test]
    fn shaper_names_round_trip() {
        for k in ShaperKind::ALL {
            assert_eq!(k.name().parse::<ShaperKind>().unwrap(), k);
        }
        assert_eq!("DPBA-dist".parse::<ShaperKind>().unwrap(), ShaperKind::DpbaDist);
        assert!("her".parse::<ShaperKind>().is_err());
    }

    fn v3() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn translation_invariant(a in v3(), t in v3(), o1 in v3(), o2 in v3(), shift in v3()) {
            let l = layout(t, &[o1, o2]);
            let moved = layout(t + shift, &[o1 + shift, o2 + shift]);
            prop_assert!((pbrs_potential(a, &l) - pbrs_potential(a + shift, &moved)).abs() < 1e-12);
        }
    }
}
