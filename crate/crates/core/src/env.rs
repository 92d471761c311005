//! Point-mass navigation with a magnetized target and magnetized obstacles.
//!
//! The agent moves by `step_size · clip(a, -1, 1)` per step inside a box workspace. In
//! two dimensions it stays in the `z = 0` plane, which is the mid-height plane of the
//! cuboid rotator.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{align_magnetization_toward, to_magnet_frame, MagnetPose, Vec3};
use crate::magnet::{CuboidMagnet, Magnet, SphericalMagnet, DEFAULT_MAGNETIZATION};
use crate::reward::{GoalLayout, GoalSite};

pub const SUCCESS_REWARD: f64 = 100.0;
pub const COLLISION_REWARD: f64 = -10.0;
pub const STEP_REWARD: f64 = -1.0;
pub const MAX_LAYOUT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskVariant {
    /// Moving target, fixed rotator.
    I,
    /// Moving target, rotator at a random angle.
    II,
    /// Fixed target, three moving spheres.
    III,
    /// Moving target and three moving spheres.
    IV,
}

impl TaskVariant {
    pub fn uses_rotator(self) -> bool {
        matches!(self, TaskVariant::I | TaskVariant::II)
    }

    pub fn obstacle_count(self, sphere_radii: &[f64]) -> usize {
        if self.uses_rotator() {
            1
        } else {
            sphere_radii.len()
        }
    }
}

impl std::str::FromStr for TaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(TaskVariant::I),
            "II" | "2" => Ok(TaskVariant::II),
            "III" | "3" => Ok(TaskVariant::III),
            "IV" | "4" => Ok(TaskVariant::IV),
            _ => Err(Error::InvalidArgument(format!("unknown task {s:?}"))),
        }
    }
}

impl std::fmt::Display for TaskVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskVariant::I => "I",
            TaskVariant::II => "II",
            TaskVariant::III => "III",
            TaskVariant::IV => "IV",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub task: TaskVariant,
    /// 2 or 3.
    pub dims: usize,
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub start: [f64; 3],
    pub step_size: f64,
    pub success_radius: f64,
    pub horizon: usize,
    pub terminate_on_collision: bool,
    pub target_radius: f64,
    /// Rotator extents along its body x, y, z.
    pub rotator: [f64; 3],
    /// The rotator's near end sits on this pivot; at angle 0 it extends along +y.
    pub pivot: [f64; 3],
    /// Rotator angles are drawn from `[-max_angle, max_angle]` (radians).
    pub max_angle: f64,
    pub sphere_radii: Vec<f64>,
    /// Target center for task III.
    pub fixed_target: [f64; 3],
    /// Minimum gap between sampled bodies, and between bodies and the start.
    pub clearance: f64,
    /// Minimum distance from the start to a sampled target center.
    pub min_target_distance: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            task: TaskVariant::II,
            dims: 2,
            workspace_min: [-0.3, -0.3, -0.1],
            workspace_max: [0.3, 0.3, 0.1],
            start: [0.0, -0.25, 0.0],
            step_size: 0.02,
            success_radius: 0.02,
            horizon: 200,
            terminate_on_collision: false,
            target_radius: 0.02,
            rotator: [0.1, 0.4, 0.05],
            pivot: [0.0, 0.0, 0.0],
            max_angle: PI / 3.0,
            sphere_radii: vec![0.02, 0.04, 0.06],
            fixed_target: [0.0, 0.2, 0.0],
            clearance: 0.01,
            min_target_distance: 0.1,
        }
    }
}

impl EnvConfig {
    pub fn for_task(task: TaskVariant) -> Self {
        EnvConfig { task, ..EnvConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dims != 2 && self.dims != 3 {
            return bad(format!("dims must be 2 or 3, got {}", self.dims));
        }
        for i in 0..3 {
            if !(self.workspace_min[i] < self.workspace_max[i]) {
                return bad("workspace must be non-empty".into());
            }
        }
        if !(self.success_radius > 0.0) || !(self.step_size > 0.0) || !(self.target_radius > 0.0) {
            return bad("success radius, step size and target radius must be positive".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.rotator.iter().any(|&v| !(v > 0.0)) || self.sphere_radii.iter().any(|&r| !(r > 0.0)) {
            return bad("obstacle extents must be positive".into());
        }
        if !self.in_workspace(self.start()) {
            return bad("start must lie in the workspace".into());
        }
        Ok(())
    }

    pub fn start(&self) -> Vec3 {
        self.plane(Vec3::from(self.start))
    }

    pub fn action_dim(&self) -> usize {
        self.dims
    }

    /// Agent position followed by the previous action.
    pub fn state_dim(&self) -> usize {
        2 * self.dims
    }

    /// Target position followed by obstacle positions.
    pub fn goal_dim(&self) -> usize {
        self.dims * (1 + self.task.obstacle_count(&self.sphere_radii))
    }

    /// Half the largest workspace extent, used to scale network inputs.
    pub fn half_extent(&self) -> f64 {
        (0..self.dims).map(|i| 0.5 * (self.workspace_max[i] - self.workspace_min[i])).fold(0.0, f64::max)
    }

    fn plane(&self, p: Vec3) -> Vec3 {
        if self.dims == 2 {
            Vec3::new(p.x, p.y, 0.0)
        } else {
            p
        }
    }

    fn in_workspace(&self, p: Vec3) -> bool {
        let a = p.to_array();
        (0..3).all(|i| a[i] >= self.workspace_min[i] && a[i] <= self.workspace_max[i])
    }

    fn clamp(&self, p: Vec3) -> Vec3 {
        let a = p.to_array();
        let c: Vec<f64> = (0..3).map(|i| a[i].clamp(self.workspace_min[i], self.workspace_max[i])).collect();
        self.plane(Vec3::new(c[0], c[1], c[2]))
    }

    fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let mut c = [0.0; 3];
        for (i, v) in c.iter_mut().enumerate() {
            *v = rng.random_range(self.workspace_min[i]..=self.workspace_max[i]);
        }
        self.plane(Vec3::from(c))
    }

    /// Rotator body at `angle` (anticlockwise about +z).
    pub fn rotator_site(&self, angle: f64) -> Result<GoalSite> {
        let [l, w, h] = self.rotator;
        let dir = Vec3::new(-angle.sin(), angle.cos(), 0.0);
        let center = Vec3::from(self.pivot) + dir * (0.5 * w);
        let magnet = CuboidMagnet::new(l, w, h, DEFAULT_MAGNETIZATION, MagnetPose::IDENTITY)?;
        let pose = MagnetPose::from_body(center, [0.0, 0.0, angle], magnet.center_offset())?;
        Ok(GoalSite { position: center, magnet: Magnet::Cuboid(CuboidMagnet { pose, ..magnet }) })
    }

    fn target_site(&self, at: Vec3) -> Result<GoalSite> {
        let angles = align_magnetization_toward(at, self.start())?;
        let pose = MagnetPose::from_body(at, angles, Vec3::ZERO)?;
        Ok(GoalSite { position: at, magnet: Magnet::Sphere(SphericalMagnet::new(self.target_radius, DEFAULT_MAGNETIZATION, pose)?) })
    }

    fn sphere_site(&self, at: Vec3, radius: f64) -> Result<GoalSite> {
        let pose = MagnetPose::from_body(at, [0.0; 3], Vec3::ZERO)?;
        Ok(GoalSite { position: at, magnet: Magnet::Sphere(SphericalMagnet::new(radius, DEFAULT_MAGNETIZATION, pose)?) })
    }
}

/// Euclidean distance from an environment point to a magnet body (zero inside).
pub fn distance_to_body(p: Vec3, magnet: &Magnet) -> Result<f64> {
    let q = to_magnet_frame(p, magnet.pose())?;
    Ok(match magnet {
        Magnet::Sphere(s) => (q.norm() - s.radius).max(0.0),
        Magnet::Cuboid(c) => {
            let gap = |v: f64, hi: f64| (-v).max(v - hi).max(0.0);
            Vec3::new(gap(q.x, c.length), gap(q.y, c.width), gap(q.z, c.height)).norm()
        }
    })
}

/// Whether `p` lies inside (or on the surface of) any obstacle.
pub fn collides(p: Vec3, layout: &GoalLayout) -> bool {
    layout.obstacles.iter().any(|o| to_magnet_frame(p, o.magnet.pose()).is_ok_and(|q| o.magnet.contains_local(q)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub agent: Vec3,
    pub last_action: Vec<f64>,
    pub layout: GoalLayout,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub collision: bool,
    /// Episode ended by the horizon rather than by success or a terminating collision.
    pub truncated: bool,
}

impl StepInfo {
    /// True termination in the sense of the MDP (bootstrap with zero).
    pub fn terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

#[derive(Debug, Clone)]
pub struct NavEnv {
    cfg: EnvConfig,
    state: EnvState,
}

impl NavEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = fixed_layout(&cfg)?;
        let state = EnvState { agent: cfg.start(), last_action: vec![0.0; cfg.dims], layout, t: 0 };
        Ok(NavEnv { cfg, state })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn layout(&self) -> &GoalLayout {
        &self.state.layout
    }

    pub fn agent(&self) -> Vec3 {
        self.state.agent
    }

    /// New layout and agent at the start.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        self.state.layout = sample_layout(&self.cfg, rng)?;
        self.state.agent = self.cfg.start();
        self.state.last_action = vec![0.0; self.cfg.dims];
        self.state.t = 0;
        Ok(self.observation())
    }

    /// Resets onto a given layout.
    pub fn reset_with(&mut self, layout: GoalLayout) -> Vec<f64> {
        self.state.layout = layout;
        self.state.agent = self.cfg.start();
        self.state.last_action = vec![0.0; self.cfg.dims];
        self.state.t = 0;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.cfg.state_dim());
        s.extend_from_slice(&self.state.agent.to_array()[..self.cfg.dims]);
        s.extend_from_slice(&self.state.last_action);
        s
    }

    pub fn goal_vector(&self) -> Vec<f64> {
        let d = self.cfg.dims;
        self.state.layout.positions().flat_map(|p| p.to_array().into_iter().take(d)).collect()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepInfo> {
        if action.len() != self.cfg.dims {
            return Err(Error::ShapeMismatch { expected: self.cfg.dims, actual: action.len() });
        }
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let mut delta = [0.0; 3];
        delta[..self.cfg.dims].copy_from_slice(&a);
        let next = self.cfg.clamp(self.state.agent + Vec3::from(delta) * self.cfg.step_size);
        if !next.is_finite() {
            return Err(Error::Divergence("agent position became non-finite".into()));
        }
        self.state.agent = next;
        self.state.last_action = a;
        self.state.t += 1;
        let success = next.distance(self.state.layout.target.position) <= self.cfg.success_radius;
        let collision = collides(next, &self.state.layout);
        let reward = if success {
            SUCCESS_REWARD
        } else if collision {
            COLLISION_REWARD
        } else {
            STEP_REWARD
        };
        let terminal = success || (collision && self.cfg.terminate_on_collision);
        let at_horizon = self.state.t >= self.cfg.horizon;
        Ok(StepInfo { reward, done: terminal || at_horizon, success, collision, truncated: at_horizon && !terminal })
    }
}

/// Layout before the first reset: rotator at angle 0 or spheres on a row, target fixed.
fn fixed_layout(cfg: &EnvConfig) -> Result<GoalLayout> {
    let target = cfg.target_site(cfg.plane(Vec3::from(cfg.fixed_target)))?;
    let obstacles = if cfg.task.uses_rotator() {
        vec![cfg.rotator_site(0.0)?]
    } else {
        let n = cfg.sphere_radii.len() as f64;
        cfg.sphere_radii
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let x = cfg.workspace_min[0] + (i as f64 + 0.5) / n * (cfg.workspace_max[0] - cfg.workspace_min[0]);
                cfg.sphere_site(cfg.plane(Vec3::new(x, 0.0, 0.0)), r)
            })
            .collect::<Result<_>>()?
    };
    Ok(GoalLayout { target, obstacles })
}

/// Rejection-samples a layout for the configured task.
pub fn sample_layout<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<GoalLayout> {
    let start = cfg.start();
    let mut attempts = 0;
    loop {
        attempts += 1;
        if attempts > MAX_LAYOUT_ATTEMPTS {
            return Err(Error::InfeasibleLayout(MAX_LAYOUT_ATTEMPTS));
        }
        let obstacles = match cfg.task {
            TaskVariant::I => vec![cfg.rotator_site(0.0)?],
            TaskVariant::II => vec![cfg.rotator_site(rng.random_range(-cfg.max_angle..=cfg.max_angle))?],
            TaskVariant::III | TaskVariant::IV => {
                let mut spheres: Vec<GoalSite> = Vec::with_capacity(cfg.sphere_radii.len());
                for &r in &cfg.sphere_radii {
                    let at = cfg.sample_point(rng);
                    spheres.push(cfg.sphere_site(at, r)?);
                }
                spheres
            }
        };
        if !obstacles_separated(cfg, &obstacles)? {
            continue;
        }
        if obstacles.iter().map(|o| distance_to_body(start, &o.magnet)).collect::<Result<Vec<_>>>()?.iter().any(|&d| d <= cfg.clearance) {
            continue;
        }
        let target_at = match cfg.task {
            TaskVariant::III => cfg.plane(Vec3::from(cfg.fixed_target)),
            _ => cfg.sample_point(rng),
        };
        if target_at.distance(start) < cfg.min_target_distance.max(cfg.success_radius) {
            continue;
        }
        let mut clear = true;
        for o in &obstacles {
            if distance_to_body(target_at, &o.magnet)? <= cfg.target_radius + cfg.clearance {
                clear = false;
                break;
            }
        }
        if !clear {
            continue;
        }
        return Ok(GoalLayout { target: cfg.target_site(target_at)?, obstacles });
    }
}

fn obstacles_separated(cfg: &EnvConfig, obstacles: &[GoalSite]) -> Result<bool> {
    for (i, a) in obstacles.iter().enumerate() {
        for b in &obstacles[i + 1..] {
            let gap = match (&a.magnet, &b.magnet) {
                (Magnet::Sphere(x), Magnet::Sphere(y)) => a.position.distance(b.position) - x.radius - y.radius,
                (_, Magnet::Sphere(y)) => distance_to_body(b.position, &a.magnet)? - y.radius,
                (Magnet::Sphere(x), _) => distance_to_body(a.position, &b.magnet)? - x.radius,
                _ => return Err(Error::InvalidArgument("cuboid pairs are not sampled".into())),
            };
            if gap <= cfg.clearance {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Appends `episode,kind,idx,x,y,z` rows for one layout.
pub fn write_layout_rows<W: Write>(out: &mut csv::Writer<W>, episode: usize, layout: &GoalLayout) -> Result<()> {
    let rows = std::iter::once(("target", 0, layout.target.position))
        .chain(layout.obstacles.iter().enumerate().map(|(i, o)| ("obstacle", i, o.position)));
    for (kind, idx, p) in rows {
        out.write_record([episode.to_string(), kind.to_string(), idx.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
    }
    Ok(())
}

pub const LAYOUT_HEADER: [&str; 6] = ["episode", "kind", "idx", "x", "y", "z"];
