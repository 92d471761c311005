//! Magnetic reward: per-magnet intensities, running standardization,
//! target-minus-obstacles combination and Softsign squashing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Vec3;
use crate::magnet::{intensity_at, FieldSettings, Magnet};

/// Capacity of each per-magnet intensity buffer.
pub const MAGNET_BUFFER_CAPACITY: usize = 1_000_000;

/// `(h - mean) / (std + eps)`.
pub fn standardize(h: f64, mean: f64, std: f64, eps: f64) -> f64 {
    (h - mean) / (std + eps)
}

/// Target term minus the mean of the obstacle terms. With no obstacles the
/// mean is taken as zero.
pub fn combine(target: f64, obstacles: &[f64]) -> f64 {
    if obstacles.is_empty() {
        return target;
    }
    target - obstacles.iter().sum::<f64>() / obstacles.len() as f64
}

/// `x / (1 + |x|)`.
pub fn softsign(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

/// A magnet placed in the environment. `position` is the environment-frame
/// point the goal vector reports for it (sphere center or box center).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSite {
    pub position: Vec3,
    pub magnet: Magnet,
}

/// Target plus obstacles for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalLayout {
    pub target: GoalSite,
    pub obstacles: Vec<GoalSite>,
}

impl GoalLayout {
    /// `[P_T, P_O1, ..., P_ON]` flattened.
    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        std::iter::once(self.target.position).chain(self.obstacles.iter().map(|o| o.position))
    }
}

/// Bounded FIFO of raw intensities for one magnet with the mean and standard
/// deviation last computed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnetBuffer {
    values: VecDeque<f64>,
    capacity: usize,
    mean: f64,
    std: f64,
}

impl MagnetBuffer {
    pub fn new(capacity: usize) -> Self {
        MagnetBuffer { values: VecDeque::new(), capacity: capacity.max(1), mean: 0.0, std: 1.0 }
    }

    pub fn push(&mut self, h: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(h);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    /// Population mean and standard deviation over the current contents.
    /// An empty buffer keeps the previous values.
    pub fn update_stats(&mut self) {
        if self.values.is_empty() {
            return;
        }
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        self.mean = mean;
        self.std = var.sqrt();
    }

    pub fn standardize(&self, h: f64, eps: f64) -> f64 {
        standardize(h, self.mean, self.std, eps)
    }
}

/// Running statistics for the target and each obstacle, kept strictly per magnet.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStats {
    pub target: MagnetBuffer,
    pub obstacles: Vec<MagnetBuffer>,
}

impl FieldStats {
    pub fn new(obstacles: usize, capacity: usize) -> Self {
        FieldStats {
            target: MagnetBuffer::new(capacity),
            obstacles: (0..obstacles).map(|_| MagnetBuffer::new(capacity)).collect(),
        }
    }

    pub fn record(&mut self, reading: &MagneticReading) {
        self.target.push(reading.target);
        for (buf, &h) in self.obstacles.iter_mut().zip(&reading.obstacles) {
            buf.push(h);
        }
    }

    pub fn update_stats(&mut self) {
        self.target.update_stats();
        for b in &mut self.obstacles {
            b.update_stats();
        }
    }
}

/// Raw intensities seen at one point, and the reward derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct MagneticReading {
    pub target: f64,
    pub obstacles: Vec<f64>,
    pub reward: f64,
}

/// Intensity of every magnet in the layout at `agent`.
pub fn layout_intensities(agent: Vec3, layout: &GoalLayout, settings: &FieldSettings) -> Result<(f64, Vec<f64>)> {
    let target = intensity_at(&layout.target.magnet, agent, settings)?;
    let obstacles = layout
        .obstacles
        .iter()
        .map(|o| intensity_at(&o.magnet, agent, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok((target, obstacles))
}

/// Standardize with the current statistics, combine and squash.
pub fn reward_from_intensities(target: f64, obstacles: &[f64], stats: &FieldStats, eps: f64) -> f64 {
    let t = stats.target.standardize(target, eps);
    let o: Vec<f64> = obstacles.iter().zip(&stats.obstacles).map(|(&h, b)| b.standardize(h, eps)).collect();
    softsign(combine(t, &o))
}

/// Magnetic reward at the agent position. Does not touch `stats`; the caller
/// records the returned raw intensities.
pub fn magnetic_reward(
    agent: Vec3,
    layout: &GoalLayout,
    stats: &FieldStats,
    settings: &FieldSettings,
) -> Result<MagneticReading> {
    let (target, obstacles) = layout_intensities(agent, layout, settings)?;
    let reward = reward_from_intensities(target, &obstacles, stats, settings.epsilon);
    Ok(MagneticReading { target, obstacles, reward })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MagnetPose;
    use crate::magnet::{SphericalMagnet, EPSILON};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(3.5, 3.5, 2.0, EPSILON), 0.0);
        assert!((standardize(1.0, 0.0, 1.0, EPSILON) - 0.9999999).abs() < 1e-12);
        assert!((standardize(1e-7, 0.0, 0.0, EPSILON) - 1.0).abs() < 1e-15);
        assert!(standardize(5.0, 1.0, 0.0, EPSILON).is_finite());
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(1.0, &[0.5, 0.5]), 0.5);
        assert_eq!(combine(0.0, &[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(combine(-2.25, &[]), -2.25);
    }

    #[test]
    fn softsign_examples() {
        assert_eq!(softsign(0.0), 0.0);
        assert_eq!(softsign(1.0), 0.5);
        assert_eq!(softsign(-3.0), -0.75);
    }

    #[test]
    fn buffer_statistics() {
        let mut b = MagnetBuffer::new(10);
        b.update_stats();
        assert_eq!((b.mean(), b.std()), (0.0, 1.0));
        for v in [1.0, 1.0, 1.0] {
            b.push(v);
        }
        b.update_stats();
        assert_eq!((b.mean(), b.std()), (1.0, 0.0));
        let mut b = MagnetBuffer::new(10);
        b.push(0.0);
        b.push(2.0);
        b.update_stats();
        assert_eq!((b.mean(), b.std()), (1.0, 1.0));
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut b = MagnetBuffer::new(3);
        for v in 0..5 {
            b.push(v as f64);
        }
        assert_eq!(b.len(), 3);
        b.update_stats();
        assert_eq!(b.mean(), 3.0);
    }

    #[test]
    fn sample_mean_converges() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut errors = Vec::new();
        for n in [100usize, 10_000, 1_000_000] {
            let mut b = MagnetBuffer::new(MAGNET_BUFFER_CAPACITY);
            for _ in 0..n {
                // Exp(1) by inversion: mean 1, std 1
                b.push(-(1.0 - rng.random::<f64>()).ln());
            }
            b.update_stats();
            errors.push(((b.mean() - 1.0).abs(), (b.std() - 1.0).abs()));
        }
        assert!(errors[0].0 > errors[1].0 && errors[1].0 > errors[2].0, "{errors:?}");
        assert!(errors[2].0 < 5e-3 && errors[2].1 < 5e-3);
    }

    fn sphere_site(at: Vec3) -> GoalSite {
        let magnet = SphericalMagnet::new(0.02, 4.0 * std::f64::consts::PI, MagnetPose::from_body(at, [0.0; 3], Vec3::ZERO).unwrap()).unwrap();
        GoalSite { position: at, magnet: Magnet::Sphere(magnet) }
    }

    fn two_magnet_layout() -> GoalLayout {
        GoalLayout { target: sphere_site(Vec3::new(0.2, 0.0, 0.0)), obstacles: vec![sphere_site(Vec3::new(-0.2, 0.0, 0.0))] }
    }

    #[test]
    fn first_episode_reward_uses_initial_stats() {
        let layout = two_magnet_layout();
        let settings = FieldSettings::with_nodes(24).unwrap();
        let stats = FieldStats::new(1, 16);
        let agent = Vec3::new(0.05, 0.07, 0.0);
        let reading = magnetic_reward(agent, &layout, &stats, &settings).unwrap();
        let k = 1.0 + EPSILON;
        let expected = softsign(reading.target / k - reading.obstacles[0] / k);
        assert!((reading.reward - expected).abs() < 1e-15);
    }

    #[test]
    fn reward_sign_near_target_and_obstacle() {
        let layout = two_magnet_layout();
        let settings = FieldSettings::with_nodes(24).unwrap();
        let mut stats = FieldStats::new(1, 10_000);
        // calibrate the statistics on a sweep across the workspace
        for i in 0..=40 {
            for j in 0..=40 {
                let p = Vec3::new(-0.4 + 0.02 * i as f64, -0.4 + 0.02 * j as f64, 0.0);
                let r = magnetic_reward(p, &layout, &stats, &settings).unwrap();
                stats.record(&r);
            }
        }
        stats.update_stats();
        let near_t = magnetic_reward(Vec3::new(0.2, 0.025, 0.0), &layout, &stats, &settings).unwrap().reward;
        let near_o = magnetic_reward(Vec3::new(-0.2, 0.025, 0.0), &layout, &stats, &settings).unwrap().reward;
        let far = magnetic_reward(Vec3::new(0.0, 0.4, 0.0), &layout, &stats, &settings).unwrap().reward;
        assert!(near_t > 0.5, "{near_t}");
        assert!(near_o < -0.5, "{near_o}");
        assert!(far.abs() < 0.2 && near_o < far && far < near_t, "{far}");
    }

    #[test]
    fn pure_functions_are_bitwise_deterministic() {
        let stats = FieldStats::new(2, 4);
        let a = reward_from_intensities(0.37, &[0.1, 2.5], &stats, EPSILON);
        let b = reward_from_intensities(0.37, &[0.1, 2.5], &stats, EPSILON);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    proptest! {
        #[test]
        fn softsign_is_bounded_odd_and_increasing(x in -1e6..1e6f64, dx in 1e-6..10.0f64) {
            prop_assert!(softsign(x).abs() < 1.0);
            prop_assert_eq!(softsign(-x), -softsign(x));
            prop_assert!(softsign(x + dx) > softsign(x));
        }

        #[test]
        fn reward_monotone_in_each_intensity(t in 0.0..10.0f64, o1 in 0.0..10.0f64, o2 in 0.0..10.0f64, d in 1e-3..1.0f64) {
            let mut stats = FieldStats::new(2, 4);
            stats.target.push(1.0); stats.target.push(2.0);
            stats.obstacles[0].push(0.5); stats.obstacles[0].push(3.0);
            stats.update_stats();
            let base = reward_from_intensities(t, &[o1, o2], &stats, EPSILON);
            prop_assert!(reward_from_intensities(t + d, &[o1, o2], &stats, EPSILON) > base);
            prop_assert!(reward_from_intensities(t, &[o1 + d, o2], &stats, EPSILON) < base);
            prop_assert!(reward_from_intensities(t, &[o1, o2 + d], &stats, EPSILON) < base);
            prop_assert!(base.abs() < 1.0);
        }
    }
}
