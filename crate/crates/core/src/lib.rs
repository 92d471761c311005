//! Magnetic field-based reward shaping for goal-conditioned reinforcement learning.

pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod geometry;
pub mod gridworld;
pub mod harness;
pub mod magnet;
pub mod nn;
pub mod quadrature;
pub mod reward;
pub mod shaping;
pub mod verify;

pub use error::{Error, Result};
