//! Deterministic gridworlds for tabular checks of the shaping machinery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{align_magnetization_toward, MagnetPose, Vec3};
use crate::magnet::{FieldSettings, Magnet, SphericalMagnet, DEFAULT_MAGNETIZATION, EPSILON};
use crate::reward::{FieldStats, GoalLayout, GoalSite, MagneticReading};
use crate::shaping::{PairChain, TabularPotential};

pub const ACTIONS: usize = 4;
/// Up, right, down, left as `(drow, dcol)`.
const MOVES: [(isize, isize); ACTIONS] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

pub const GOAL_REWARD: f64 = 100.0;
pub const OBSTACLE_REWARD: f64 = -10.0;
pub const STEP_REWARD: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Free,
    Wall,
    Obstacle,
    Goal,
}

/// Grid with walls, one goal cell and obstacle cells.
///
/// Moving into a wall or off the grid leaves the agent in place. Entering the goal
/// terminates with `+100`, entering an obstacle costs `-10`, anything else `-1` unless
/// overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    start: usize,
    goal: usize,
    obstacles: Vec<usize>,
    step_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStep {
    pub next: usize,
    pub reward: f64,
    pub done: bool,
}

impl GridWorld {
    /// Parses rows of `.` free, `#` wall, `X` obstacle, `S` start, `G` goal.
    pub fn parse(map: &str) -> Result<Self> {
        let lines: Vec<&str> = map.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let rows = lines.len();
        let cols = lines.first().map_or(0, |l| l.len());
        if rows == 0 || cols == 0 || lines.iter().any(|l| l.len() != cols) {
            return Err(Error::InvalidArgument("grid map must be a non-empty rectangle".into()));
        }
        let mut cells = Vec::with_capacity(rows * cols);
        let (mut start, mut goal) = (None, None);
        let mut obstacles = Vec::new();
        for (r, line) in lines.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                let idx = r * cols + c;
                cells.push(match ch {
                    '.' => Cell::Free,
                    '#' => Cell::Wall,
                    'X' => {
                        obstacles.push(idx);
                        Cell::Obstacle
                    }
                    'S' => {
                        start = Some(idx);
                        Cell::Free
                    }
                    'G' => {
                        goal = Some(idx);
                        Cell::Goal
                    }
                    other => return Err(Error::InvalidArgument(format!("unknown grid cell {other:?}"))),
                });
            }
        }
        match (start, goal) {
            (Some(start), Some(goal)) => Ok(GridWorld { rows, cols, cells, start, goal, obstacles, step_reward: STEP_REWARD }),
            _ => Err(Error::InvalidArgument("grid map needs one S and one G".into())),
        }
    }

    /// Reward for a move that reaches neither the goal nor an obstacle.
    pub fn with_step_reward(mut self, r: f64) -> Self {
        self.step_reward = r;
        self
    }

    pub fn states(&self) -> usize {
        self.rows * self.cols
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn obstacles(&self) -> &[usize] {
        &self.obstacles
    }

    pub fn is_wall(&self, s: usize) -> bool {
        self.cells[s] == Cell::Wall
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s == self.goal
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s / self.cols, s % self.cols)
    }

    pub fn pair(s: usize, a: usize) -> usize {
        s * ACTIONS + a
    }

    pub fn step(&self, s: usize, a: usize) -> GridStep {
        let (r, c) = self.coords(s);
        let (dr, dc) = MOVES[a];
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        let mut next = s;
        if nr >= 0 && nc >= 0 && (nr as usize) < self.rows && (nc as usize) < self.cols {
            let idx = nr as usize * self.cols + nc as usize;
            if self.cells[idx] != Cell::Wall {
                next = idx;
            }
        }
        let (reward, done) = match self.cells[next] {
            Cell::Goal => (GOAL_REWARD, true),
            Cell::Obstacle => (OBSTACLE_REWARD, false),
            _ => (self.step_reward, false),
        };
        GridStep { next, reward, done }
    }

    /// Optimal action values by value iteration on the sparse reward.
    pub fn optimal_q(&self, gamma: f64, tolerance: f64) -> Vec<f64> {
        let mut q = vec![0.0; self.states() * ACTIONS];
        loop {
            let mut change = 0.0f64;
            for s in 0..self.states() {
                if self.is_wall(s) || self.is_terminal(s) {
                    continue;
                }
                for a in 0..ACTIONS {
                    let st = self.step(s, a);
                    let boot = if st.done { 0.0 } else { max_value(&q[st.next * ACTIONS..][..ACTIONS]) };
                    let v = st.reward + gamma * boot;
                    change = change.max((v - q[Self::pair(s, a)]).abs());
                    q[Self::pair(s, a)] = v;
                }
            }
            if change < tolerance {
                return q;
            }
        }
    }

    /// Magnetic reward of entering each cell, with statistics fitted over all open cells.
    ///
    /// Cell `(r, c)` sits at `(c, r, 0)` in field coordinates; the goal and every obstacle
    /// carry a sphere of radius `radius`, the goal magnetized toward the start.
    pub fn magnetic_rewards(&self, radius: f64, settings: &FieldSettings) -> Result<Vec<f64>> {
        let point = |s: usize| {
            let (r, c) = self.coords(s);
            Vec3::new(c as f64, r as f64, 0.0)
        };
        let site = |s: usize, toward: Option<Vec3>| -> Result<GoalSite> {
            let at = point(s);
            let angles = match toward {
                Some(focus) => align_magnetization_toward(at, focus)?,
                None => [0.0; 3],
            };
            let pose = MagnetPose::from_body(at, angles, Vec3::ZERO)?;
            Ok(GoalSite { position: at, magnet: Magnet::Sphere(SphericalMagnet::new(radius, DEFAULT_MAGNETIZATION, pose)?) })
        };
        let layout = GoalLayout {
            target: site(self.goal, Some(point(self.start)))?,
            obstacles: self.obstacles.iter().map(|&o| site(o, None)).collect::<Result<_>>()?,
        };
        let open: Vec<usize> = (0..self.states()).filter(|&s| !self.is_wall(s)).collect();
        let mut stats = FieldStats::new(layout.obstacles.len(), open.len());
        let mut readings = vec![None; self.states()];
        for &s in &open {
            let (t, o) = crate::reward::layout_intensities(point(s), &layout, settings)?;
            let reading = MagneticReading { target: t, obstacles: o, reward: 0.0 };
            stats.record(&reading);
            readings[s] = Some(reading);
        }
        stats.update_stats();
        Ok(readings
            .into_iter()
            .map(|r| r.map_or(0.0, |r| crate::reward::reward_from_intensities(r.target, &r.obstacles, &stats, EPSILON)))
            .collect())
    }

    /// The chain over state-action pairs induced by a deterministic policy.
    pub fn policy_chain(&self, policy: &[usize], pair_reward: impl Fn(usize, usize, &GridStep) -> f64) -> PairChain {
        let n = self.states() * ACTIONS;
        let mut transitions = vec![Vec::new(); n];
        let mut reward = vec![0.0; n];
        for s in 0..self.states() {
            for a in 0..ACTIONS {
                let st = self.step(s, a);
                let x = Self::pair(s, a);
                reward[x] = pair_reward(s, a, &st);
                if !st.done {
                    transitions[x].push((Self::pair(st.next, policy[st.next]), 1.0));
                }
            }
        }
        PairChain { transitions, reward }
    }
}

fn max_value(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Greedy action with ties broken uniformly at random, used for behaviour.
fn greedy_random<R: Rng + ?Sized>(q: &[f64], rng: &mut R) -> usize {
    let best = max_value(q);
    let ties = q.iter().filter(|&&v| v >= best - 1e-9).count();
    let pick = rng.random_range(0..ties);
    q.iter().enumerate().filter(|(_, &v)| v >= best - 1e-9).nth(pick).map_or(0, |(a, _)| a)
}

/// Greedy action; values within `1e-9` of the best count as ties, broken toward the lowest index.
pub fn greedy(q: &[f64]) -> usize {
    let best = max_value(q);
    q.iter().position(|&v| v >= best - 1e-9).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearningConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Learning rate of the tabular potential.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearningRun {
    pub q: Vec<f64>,
    pub successes: Vec<bool>,
    pub potential: Option<Vec<f64>>,
}

/// Tabular Q-learning with ε-greedy exploration, optionally with learned potential shaping
/// driven by the per-cell reward `shaping_source` (evaluated at the entered cell).
pub fn q_learning(world: &GridWorld, cfg: &QLearningConfig, shaping_source: Option<&[f64]>, seed: u64) -> Result<QLearningRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = vec![0.0; world.states() * ACTIONS];
    let mut phi = match shaping_source {
        Some(_) => Some(TabularPotential::new(world.states() * ACTIONS, cfg.eta, cfg.gamma)?),
        None => None,
    };
    let mut successes = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let mut s = world.start();
        let mut success = false;
        for _ in 0..cfg.horizon {
            let a = if rng.random::<f64>() < cfg.epsilon {
                rng.random_range(0..ACTIONS)
            } else {
                greedy_random(&q[s * ACTIONS..][..ACTIONS], &mut rng)
            };
            let st = world.step(s, a);
            let mut r = st.reward;
            if let (Some(phi), Some(source)) = (phi.as_mut(), shaping_source) {
                let next = (!st.done).then(|| GridWorld::pair(st.next, greedy(&q[st.next * ACTIONS..][..ACTIONS])));
                r += phi.td_step(GridWorld::pair(s, a), next, source[st.next])?.shaping;
            }
            let boot = if st.done { 0.0 } else { max_value(&q[st.next * ACTIONS..][..ACTIONS]) };
            let x = GridWorld::pair(s, a);
            q[x] += cfg.alpha * (r + cfg.gamma * boot - q[x]);
            s = st.next;
            if st.done {
                success = true;
                break;
            }
        }
        successes.push(success);
    }
    Ok(QLearningRun { q, successes, potential: phi.map(|p| p.values().to_vec()) })
}

/// States visited by following the greedy policy from the start until termination or a repeat.
pub fn greedy_path(world: &GridWorld, q: &[f64]) -> Vec<usize> {
    let mut seen = vec![false; world.states()];
    let mut path = Vec::new();
    let mut s = world.start();
    while !seen[s] && !world.is_terminal(s) {
        seen[s] = true;
        path.push(s);
        s = world.step(s, greedy(&q[s * ACTIONS..][..ACTIONS])).next;
    }
    path
}

/// First episode index at which the moving average (trailing `window`) of `rate` reaches `level`.
pub fn episodes_to_reach(rate: &[f64], window: usize, level: f64) -> Option<usize> {
    let window = window.max(1);
    (window..=rate.len()).find(|&end| rate[end - window..end].iter().sum::<f64>() / window as f64 >= level)
}

/// Per-cell advice `softsign(scale·(min(d_obstacle, clip) - d_goal))` in cell units, using the
/// nearest obstacle. Walls get zero.
pub fn distance_advice(world: &GridWorld, scale: f64, clip: f64) -> Vec<f64> {
    let dist = |a: usize, b: usize| {
        let (p, q) = (world.coords(a), world.coords(b));
        ((p.0 as f64 - q.0 as f64).powi(2) + (p.1 as f64 - q.1 as f64).powi(2)).sqrt()
    };
    (0..world.states())
        .map(|s| {
            if world.is_wall(s) {
                return 0.0;
            }
            let d_obstacle = world.obstacles().iter().map(|&o| dist(s, o)).fold(clip, f64::min);
            crate::reward::softsign(scale * (d_obstacle - dist(s, world.goal())))
        })
        .collect()
}

/// Open 7×7 grid with start and goal on the same row, so the shortest route is unique,
/// and one obstacle beside it.
pub const INVARIANCE_MAP: &str = "
    .......
    .......
    ...X...
    S.....G
    .......
    .......
    .......
";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceConfig {
    pub learning: QLearningConfig,
    pub seeds: u64,
    pub advice_scale: f64,
    pub advice_clip: f64,
    pub window: usize,
    pub level: f64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        InvarianceConfig {
            learning: QLearningConfig { episodes: 5000, horizon: 14, alpha: 1.0, gamma: 0.9, epsilon: 0.1, eta: 0.1 },
            seeds: 50,
            advice_scale: 0.1,
            advice_clip: 2.0,
            window: 10,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// Greedy-path states (of either learner) where the greedy actions differ, over all seeds.
    pub mismatches: usize,
    pub checked_states: usize,
    /// Greedy-path states where the sparse learner disagrees with value iteration.
    pub sparse_vs_optimal: usize,
    pub sparse_episodes: Option<usize>,
    pub shaped_episodes: Option<usize>,
}

impl InvarianceReport {
    pub fn speedup_ratio(&self) -> Option<f64> {
        Some(self.shaped_episodes? as f64 / self.sparse_episodes? as f64)
    }
}

/// Sparse versus shaped tabular Q-learning on `world` with a zero-step-cost reward.
///
/// Success rates are averaged over seeds per episode; the episode counts are the first
/// index at which the trailing mean reaches `level`.
pub fn invariance_experiment(world: &GridWorld, cfg: &InvarianceConfig) -> Result<InvarianceReport> {
    let world = world.clone().with_step_reward(0.0);
    let advice = distance_advice(&world, cfg.advice_scale, cfg.advice_clip);
    let optimal = world.optimal_q(cfg.learning.gamma, 1e-12);
    let sparse_cfg = QLearningConfig { eta: 0.0, ..cfg.learning };
    let episodes = cfg.learning.episodes;
    let (mut sparse_rate, mut shaped_rate) = (vec![0.0; episodes], vec![0.0; episodes]);
    let mut report =
        InvarianceReport { mismatches: 0, checked_states: 0, sparse_vs_optimal: 0, sparse_episodes: None, shaped_episodes: None };
    let action = |q: &[f64], s: usize| greedy(&q[s * ACTIONS..][..ACTIONS]);
    for seed in 0..cfg.seeds {
        let sparse = q_learning(&world, &sparse_cfg, None, seed)?;
        let shaped = q_learning(&world, &cfg.learning, Some(&advice), seed)?;
        for (i, (a, b)) in sparse.successes.iter().zip(&shaped.successes).enumerate() {
            sparse_rate[i] += f64::from(u8::from(*a)) / cfg.seeds as f64;
            shaped_rate[i] += f64::from(u8::from(*b)) / cfg.seeds as f64;
        }
        let mut states = greedy_path(&world, &sparse.q);
        states.extend(greedy_path(&world, &shaped.q));
        states.sort_unstable();
        states.dedup();
        for s in states {
            report.checked_states += 1;
            report.mismatches += usize::from(action(&sparse.q, s) != action(&shaped.q, s));
            report.sparse_vs_optimal += usize::from(action(&sparse.q, s) != action(&optimal, s));
        }
    }
    report.sparse_episodes = episodes_to_reach(&sparse_rate, cfg.window, cfg.level);
    report.shaped_episodes = episodes_to_reach(&shaped_rate, cfg.window, cfg.level);
    Ok(report)
}

/// Fixed policy on a 5×5 grid used for the expected-shaping check: right along the top
/// row, then down the last column.
pub fn theorem1_grid_chain(advice_scale: f64) -> Result<PairChain> {
    let world = GridWorld::parse(
        "
        S....
        .....
        ..X..
        .....
        ....G
        ",
    )?;
    let advice = distance_advice(&world, advice_scale, 2.0);
    let policy: Vec<usize> = (0..world.states()).map(|s| if world.coords(s).1 < 4 { 1 } else { 2 }).collect();
    Ok(world.policy_chain(&policy, |_, _, st| advice[st.next]))
}
