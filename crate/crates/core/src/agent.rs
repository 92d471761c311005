//! Goal-conditioned deterministic actor-critic with per-step reward shaping.
//!
//! Network inputs are scaled: positions are divided by the workspace half extent, so
//! every input lies roughly in `[-1, 1]`. Replayed transitions hold scaled vectors.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{distance_objective, pbrs_shaping, ShaperKind};
use crate::env::{EnvConfig, NavEnv, StepInfo};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::magnet::{FieldSettings, EPSILON};
use crate::nn::{adam_step, soft_update, AdamConfig, AdamState, Gradients, Mlp, OutputActivation};
use crate::reward::{combine, layout_intensities, reward_from_intensities, standardize, FieldStats, GoalLayout, MagneticReading};
use crate::shaping::{NetworkPotential, PotentialDims, PotentialStep};

pub const REPLAY_CAPACITY: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub potential_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub noise_std: f64,
    pub batch_size: usize,
    /// Gradient iterations run at every episode end.
    pub updates_per_episode: usize,
    pub replay_capacity: usize,
    pub magnet_buffer_capacity: usize,
    /// Gauss-Legendre nodes per angle for sphere intensities.
    pub field_nodes: usize,
    /// Next action used in the potential's TD target.
    pub potential_next_action: NextAction,
}

/// Which `a'` the learned potential bootstraps from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextAction {
    /// Noiseless policy output at `s'`. Off-policy; the potential tends to blow up.
    Greedy,
    /// The action actually executed at `s'`, exploration noise included.
    #[default]
    Executed,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![32, 32],
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            potential_lr: 1e-4,
            gamma: 0.99,
            tau: 0.001,
            noise_std: 0.4,
            batch_size: 128,
            updates_per_episode: 20,
            replay_capacity: REPLAY_CAPACITY,
            magnet_buffer_capacity: crate::reward::MAGNET_BUFFER_CAPACITY,
            field_nodes: 16,
            potential_next_action: NextAction::default(),
        }
    }
}

impl AgentConfig {
    /// Settings used for the full-size runs: 256-unit layers, 100 iterations per episode,
    /// 64 quadrature nodes.
    pub fn full_scale() -> Self {
        AgentConfig { hidden: vec![256, 256], updates_per_episode: 100, field_nodes: 64, ..AgentConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.actor_lr, self.critic_lr, self.tau, self.gamma];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.gamma > 1.0 || self.tau > 1.0 {
            return Err(Error::Config("learning rates, gamma and tau must lie in (0, 1]".into()));
        }
        if !(self.potential_lr >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::Config("potential lr and noise must be non-negative".into()));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("batch, replay capacity and hidden sizes must be positive".into()));
        }
        if self.field_nodes == 0 || self.magnet_buffer_capacity == 0 {
            return Err(Error::Config("field nodes and magnet buffer capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Variants of the magnetic shaper with one component removed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Negative distances replace field intensities.
    pub no_mf: bool,
    /// Intensities are combined raw, without standardization or Softsign.
    pub no_nt: bool,
    /// The magnetic reward is used directly as a state potential.
    pub no_srt: bool,
}

impl Ablations {
    pub fn any(&self) -> bool {
        self.no_mf || self.no_nt || self.no_srt
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_mf {
            parts.push("no_mf");
        }
        if self.no_nt {
            parts.push("no_nt");
        }
        if self.no_srt {
            parts.push("no_srt");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    /// Environment reward plus shaping reward.
    pub reward: f64,
    pub goal: Vec<f64>,
    /// The episode ended in a true termination at `s_next`.
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { data: Vec::new(), capacity: capacity.max(1), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores `t`, overwriting the oldest entry when full; returns its slot.
    pub fn push(&mut self, t: Transition) -> usize {
        let slot = self.next;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[slot] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.data.len() < n || n == 0 {
            return Err(Error::InvalidArgument(format!("cannot sample {n} from {} transitions", self.data.len())));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.data.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| &self.data[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentDims {
    pub state: usize,
    pub action: usize,
    pub goal: usize,
}

impl AgentDims {
    pub fn of(env: &EnvConfig) -> Self {
        AgentDims { state: env.state_dim(), action: env.action_dim(), goal: env.goal_dim() }
    }

    pub fn actor_sizes(&self, hidden: &[usize]) -> Vec<usize> {
        let mut v = vec![self.state + self.goal];
        v.extend_from_slice(hidden);
        v.push(self.action);
        v
    }

    pub fn critic_sizes(&self, hidden: &[usize]) -> Vec<usize> {
        let mut v = vec![self.state + self.action + self.goal];
        v.extend_from_slice(hidden);
        v.push(1);
        v
    }

    pub fn potential(&self) -> PotentialDims {
        PotentialDims { state: self.state, action: self.action, goal: self.goal }
    }
}

/// Actor, critic, their target copies and optimizer states.
#[derive(Debug, Clone)]
pub struct AgentNets {
    pub dims: AgentDims,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(dims: AgentDims, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let actor = Mlp::new(&dims.actor_sizes(hidden), OutputActivation::Tanh { scale: 1.0 }, rng)?;
        let critic = Mlp::new(&dims.critic_sizes(hidden), OutputActivation::Linear, rng)?;
        Ok(AgentNets {
            dims,
            actor_adam: AdamState::new(&actor, AdamConfig::default()),
            critic_adam: AdamState::new(&critic, AdamConfig::default()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        })
    }
}

/// `clip(π(s, g) + ξ, -1, 1)` with `ξ ~ N(0, noise_std²)` per component.
pub fn act<R: Rng + ?Sized>(actor: &Mlp, s: &[f64], g: &[f64], noise_std: f64, rng: &mut R) -> Result<Vec<f64>> {
    let input: Vec<f64> = s.iter().chain(g).copied().collect();
    let mut a = actor.forward(&input)?;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in &mut a {
            *v += normal.sample(rng);
        }
    }
    for v in &mut a {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(a)
}

fn rows(batch: &[&Transition], parts: &[&dyn Fn(&Transition) -> &[f64]]) -> Array2<f64> {
    let width: usize = parts.iter().map(|p| p(batch[0]).len()).sum();
    let mut out = Array2::zeros((batch.len(), width));
    for (i, t) in batch.iter().enumerate() {
        let mut row = out.row_mut(i);
        let mut c = 0;
        for p in parts {
            for &v in p(t) {
                row[c] = v;
                c += 1;
            }
        }
    }
    out
}

fn concat_cols(blocks: &[ArrayView2<f64>]) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), blocks).expect("row counts agree")
}

/// One Adam step on the mean squared Bellman error; returns the loss before the step.
///
/// Targets use the target networks and are masked to `r` at true terminations.
pub fn critic_update(nets: &mut AgentNets, batch: &[&Transition], gamma: f64, lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let n = batch.len() as f64;
    let next_sg = rows(batch, &[&|t| &t.s_next, &|t| &t.goal]);
    let next_a = nets.actor_target.forward_batch(next_sg.view())?;
    let s_next = rows(batch, &[&|t| &t.s_next]);
    let g = rows(batch, &[&|t| &t.goal]);
    let q_next = nets.critic_target.forward_batch(concat_cols(&[s_next.view(), next_a.view(), g.view()]).view())?;
    let x = rows(batch, &[&|t| &t.s, &|t| &t.a, &|t| &t.goal]);
    let (q, tape) = nets.critic.forward_tape(x.view())?;
    let mut upstream = Array2::zeros((batch.len(), 1));
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let bootstrap = if t.terminal { 0.0 } else { gamma * q_next[(i, 0)] };
        let err = q[(i, 0)] - (t.reward + bootstrap);
        loss += err * err / n;
        upstream[(i, 0)] = 2.0 * err / n;
    }
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("critic loss is {loss}")));
    }
    let (grads, _) = nets.critic.backward(&tape, upstream.view())?;
    adam_step(&mut nets.critic, &grads, &mut nets.critic_adam, lr)?;
    Ok(loss)
}

/// `mean Q` over a batch of actions and its gradient with respect to each action row.
pub type ActionCritic<'a> = dyn FnMut(ArrayView2<f64>) -> Result<(f64, Array2<f64>)> + 'a;

/// Objective `J = mean Q(s, π(s, g), g)` and the parameter gradient of `-J`.
///
/// `sg` holds one `[s, g]` row per sample.
pub fn policy_gradient(actor: &Mlp, sg: ArrayView2<f64>, critic: &mut ActionCritic<'_>) -> Result<(f64, Gradients)> {
    let (a, tape) = actor.forward_tape(sg)?;
    let (objective, dj_da) = critic(a.view())?;
    if !objective.is_finite() {
        return Err(Error::Divergence(format!("actor objective is {objective}")));
    }
    let (grads, _) = actor.backward(&tape, (-dj_da).view())?;
    Ok((objective, grads))
}

/// The online critic seen as a function of the actions for fixed `s` and `g`.
pub fn mlp_action_critic<'a>(critic: &'a Mlp, s: ArrayView2<'a, f64>, g: ArrayView2<'a, f64>) -> impl FnMut(ArrayView2<f64>) -> Result<(f64, Array2<f64>)> + 'a {
    move |a: ArrayView2<f64>| {
        let n = a.nrows() as f64;
        let x = concat_cols(&[s, a, g]);
        let (q, tape) = critic.forward_tape(x.view())?;
        let upstream = Array2::from_elem((a.nrows(), 1), 1.0 / n);
        let (_, dx) = critic.backward(&tape, upstream.view())?;
        let ds = s.ncols();
        Ok((q.sum() / n, dx.slice(s![.., ds..ds + a.ncols()]).to_owned()))
    }
}

/// Rows `[s, g]`, `s` and `g` of a minibatch.
pub fn actor_inputs(batch: &[&Transition]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    (rows(batch, &[&|t| &t.s, &|t| &t.goal]), rows(batch, &[&|t| &t.s]), rows(batch, &[&|t| &t.goal]))
}

/// One Adam ascent step on `mean Q(s, π(s, g), g)`; returns the objective before the step.
pub fn actor_update(nets: &mut AgentNets, batch: &[&Transition], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let (sg, s_only, g) = actor_inputs(batch);
    let mut critic = mlp_action_critic(&nets.critic, s_only.view(), g.view());
    let (objective, grads) = policy_gradient(&nets.actor, sg.view(), &mut critic)?;
    adam_step(&mut nets.actor, &grads, &mut nets.actor_adam, lr)?;
    Ok(objective)
}

/// Per-episode record streamed by [`Trainer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub success: u8,
    pub timesteps: usize,
    /// Sum of environment rewards (unshaped).
    #[serde(rename = "return")]
    pub ret: f64,
    /// Mean over the episode-end iterations; 0 when no update ran.
    pub critic_loss: f64,
    pub actor_obj: f64,
    /// Mean per-step potential loss; 0 for shapers without a learned potential.
    pub phi_loss: f64,
}

/// What the trainer exposes to an observer.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Step { episode: usize, t: usize, env_reward: f64, shaping: f64, stored_reward: f64, objective_reward: f64 },
    PolicyUpdate { episode: usize, iterations: usize },
    StatsUpdate { episode: usize },
    EpisodeEnd(EpisodeMetrics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub shaper: ShaperKind,
    pub ablations: Ablations,
    pub agent: AgentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { shaper: ShaperKind::Mfrs, ablations: Ablations::default(), agent: AgentConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.ablations.any() && self.shaper != ShaperKind::Mfrs {
            return Err(Error::Config("ablations apply only to the magnetic shaper".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.ablations.any() {
            format!("{}_{}", self.shaper, self.ablations.label())
        } else {
            self.shaper.to_string()
        }
    }
}

/// Independent random streams, so changing the shaper does not change the layouts.
struct Streams {
    env: ChaCha8Rng,
    noise: ChaCha8Rng,
    replay: ChaCha8Rng,
}

/// Runs the goal-conditioned training loop for one seed.
pub struct Trainer {
    env: NavEnv,
    cfg: TrainConfig,
    nets: AgentNets,
    potential: Option<NetworkPotential>,
    stats: FieldStats,
    field: FieldSettings,
    replay: ReplayBuffer,
    streams: Streams,
    scale: f64,
    episode: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Trainer {
    pub fn new(env_cfg: EnvConfig, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let env = NavEnv::new(env_cfg)?;
        let dims = AgentDims::of(env.config());
        let mut init = stream(seed, 0);
        let nets = AgentNets::new(dims, &cfg.agent.hidden, &mut init)?;
        let potential = if cfg.shaper.learns_potential() && !cfg.ablations.no_srt {
            Some(NetworkPotential::new(dims.potential(), &cfg.agent.hidden, cfg.agent.potential_lr, cfg.agent.gamma, &mut init)?)
        } else {
            None
        };
        let n_obs = env.layout().obstacles.len();
        let stats = FieldStats::new(n_obs, cfg.agent.magnet_buffer_capacity);
        let field = FieldSettings::with_nodes(cfg.agent.field_nodes)?;
        let replay = ReplayBuffer::new(cfg.agent.replay_capacity);
        let scale = 1.0 / env.config().half_extent();
        let streams = Streams { env: stream(seed, 1), noise: stream(seed, 2), replay: stream(seed, 3) };
        Ok(Trainer { env, cfg, nets, potential, stats, field, replay, streams, scale, episode: 0 })
    }

    pub fn nets(&self) -> &AgentNets {
        &self.nets
    }

    pub fn potential(&self) -> Option<&NetworkPotential> {
        self.potential.as_ref()
    }

    pub fn stats(&self) -> &FieldStats {
        &self.stats
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn env(&self) -> &NavEnv {
        &self.env
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Observation with the position part scaled.
    fn scaled_state(&self) -> Vec<f64> {
        let d = self.env.config().dims;
        let mut s = self.env.observation();
        for v in &mut s[..d] {
            *v *= self.scale;
        }
        s
    }

    fn scaled_goal(&self) -> Vec<f64> {
        self.env.goal_vector().into_iter().map(|v| v * self.scale).collect()
    }

    /// Objective reward at `p` and the raw signals to record, if any.
    fn objective(&self, p: Vec3, layout: &GoalLayout) -> Result<(f64, Option<MagneticReading>)> {
        match self.cfg.shaper {
            ShaperKind::DpbaDist => Ok((distance_objective(p, layout), None)),
            ShaperKind::Mfrs => {
                let ab = self.cfg.ablations;
                let (t, o) = if ab.no_mf {
                    (-p.distance(layout.target.position), layout.obstacles.iter().map(|x| -p.distance(x.position)).collect())
                } else {
                    layout_intensities(p, layout, &self.field)?
                };
                let reward = if ab.no_nt { combine(t, &o) } else { reward_from_intensities(t, &o, &self.stats, self.field.epsilon) };
                if !reward.is_finite() {
                    return Err(Error::Divergence(format!("objective reward is {reward}")));
                }
                Ok((reward, Some(MagneticReading { target: t, obstacles: o, reward })))
            }
            _ => Ok((0.0, None)),
        }
    }

    /// Trains one episode and reports every event to `observer`.
    pub fn run_episode(&mut self, observer: &mut dyn FnMut(&TrainEvent)) -> Result<EpisodeMetrics> {
        let episode = self.episode;
        let gamma = self.cfg.agent.gamma;
        self.env.reset(&mut self.streams.env)?;
        let layout = self.env.layout().clone();
        let g = self.scaled_goal();
        let mut s = self.scaled_state();
        let mut a = act(&self.nets.actor, &s, &g, self.cfg.agent.noise_std, &mut self.streams.noise)?;
        // potential of the current state for the fixed-potential variants
        let mut prev_objective = if self.cfg.ablations.no_srt { self.objective(self.env.agent(), &layout)?.0 } else { 0.0 };
        let (mut ret, mut phi_loss, mut t) = (0.0, 0.0, 0);
        let info: StepInfo = loop {
            let before = self.env.agent();
            let info = self.env.step(&a)?;
            t += 1;
            let s_next = self.scaled_state();
            let after = self.env.agent();
            let (objective, reading) = self.objective(after, &layout)?;
            if let Some(r) = &reading {
                self.stats.record(r);
            }
            let terminal = info.terminal();
            let a_next = if terminal { None } else { Some(act(&self.nets.actor, &s_next, &g, self.cfg.agent.noise_std, &mut self.streams.noise)?) };
            let shaping = match self.cfg.shaper {
                ShaperKind::Ns => 0.0,
                ShaperKind::PbrsDist => pbrs_shaping(before, after, &layout, gamma, terminal),
                _ if self.cfg.ablations.no_srt => {
                    let next = if terminal { 0.0 } else { objective };
                    let f = gamma * next - prev_objective;
                    prev_objective = objective;
                    f
                }
                _ => {
                    let potential = self.potential.as_mut().expect("learned potential exists");
                    let greedy = match (terminal, self.cfg.agent.potential_next_action) {
                        (true, _) => None,
                        (false, NextAction::Greedy) => Some(act(&self.nets.actor, &s_next, &g, 0.0, &mut self.streams.noise)?),
                        (false, NextAction::Executed) => a_next.clone(),
                    };
                    let step = PotentialStep { state: &s, action: &a, next_state: &s_next, next_action: greedy.as_deref(), goal: &g };
                    let out = potential.td_step(&step, objective).map_err(|e| match e {
                        Error::Divergence(m) => Error::Divergence(format!("episode {episode}: {m}")),
                        other => other,
                    })?;
                    phi_loss += out.loss;
                    out.shaping
                }
            };
            let stored = info.reward + shaping;
            if !stored.is_finite() {
                return Err(Error::Divergence(format!("episode {episode}: shaped reward is {stored}")));
            }
            let slot = self.replay.push(Transition { s: s.clone(), a: a.clone(), s_next: s_next.clone(), reward: stored, goal: g.clone(), terminal });
            ret += info.reward;
            observer(&TrainEvent::Step {
                episode,
                t,
                env_reward: info.reward,
                shaping,
                stored_reward: self.replay.get(slot).map_or(f64::NAN, |x| x.reward),
                objective_reward: objective,
            });
            match a_next {
                Some(next) if !info.done => {
                    s = s_next;
                    a = next;
                }
                _ => break info,
            }
        };
        let (critic_loss, actor_obj) = self.update_policy(episode, observer)?;
        self.stats.update_stats();
        observer(&TrainEvent::StatsUpdate { episode });
        self.episode += 1;
        let m = EpisodeMetrics {
            episode,
            success: info.success as u8,
            timesteps: t,
            ret,
            critic_loss,
            actor_obj,
            phi_loss: if self.potential.is_some() { phi_loss / t as f64 } else { 0.0 },
        };
        observer(&TrainEvent::EpisodeEnd(m));
        Ok(m)
    }

    fn update_policy(&mut self, episode: usize, observer: &mut dyn FnMut(&TrainEvent)) -> Result<(f64, f64)> {
        let ac = &self.cfg.agent;
        if self.replay.len() < ac.batch_size || ac.updates_per_episode == 0 {
            return Ok((0.0, 0.0));
        }
        let (mut closs, mut aobj) = (0.0, 0.0);
        for _ in 0..ac.updates_per_episode {
            let idx = self.replay.sample_indices(ac.batch_size, &mut self.streams.replay)?;
            let batch: Vec<&Transition> = idx.iter().map(|&i| self.replay.get(i).expect("sampled index")).collect();
            closs += critic_update(&mut self.nets, &batch, ac.gamma, ac.critic_lr)
                .map_err(|e| Error::Divergence(format!("episode {episode}: {e}")))?;
            aobj += actor_update(&mut self.nets, &batch, ac.actor_lr).map_err(|e| Error::Divergence(format!("episode {episode}: {e}")))?;
            soft_update(&mut self.nets.actor_target, &self.nets.actor, ac.tau)?;
            soft_update(&mut self.nets.critic_target, &self.nets.critic, ac.tau)?;
        }
        observer(&TrainEvent::PolicyUpdate { episode, iterations: ac.updates_per_episode });
        let k = ac.updates_per_episode as f64;
        Ok((closs / k, aobj / k))
    }

    /// Runs `episodes` episodes and returns their metrics.
    pub fn train(&mut self, episodes: usize, observer: &mut dyn FnMut(&TrainEvent)) -> Result<Vec<EpisodeMetrics>> {
        (0..episodes).map(|_| self.run_episode(observer)).collect()
    }
}

/// Outcome of running the noiseless policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub average_timesteps: f64,
}

/// Runs `policy` on freshly sampled layouts; the policy sees the environment directly.
pub fn evaluate_with(env_cfg: EnvConfig, episodes: usize, seed: u64, policy: &mut dyn FnMut(&NavEnv) -> Result<Vec<f64>>) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::EmptyMetrics);
    }
    let mut env = NavEnv::new(env_cfg)?;
    let mut rng = stream(seed, 1);
    let (mut wins, mut steps) = (0usize, 0usize);
    for _ in 0..episodes {
        env.reset(&mut rng)?;
        loop {
            let a = policy(&env)?;
            let info = env.step(&a)?;
            if info.done {
                wins += info.success as usize;
                steps += env.state().t;
                break;
            }
        }
    }
    Ok(EvalSummary { episodes, success_rate: wins as f64 / episodes as f64, average_timesteps: steps as f64 / episodes as f64 })
}

/// Runs the deterministic policy of `actor` on freshly sampled layouts.
pub fn evaluate(env_cfg: EnvConfig, actor: &Mlp, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let scale = 1.0 / env_cfg.half_extent();
    let d = env_cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    evaluate_with(env_cfg, episodes, seed, &mut |env| {
        let mut s = env.observation();
        for v in &mut s[..d] {
            *v *= scale;
        }
        let g: Vec<f64> = env.goal_vector().into_iter().map(|v| v * scale).collect();
        act(actor, &s, &g, 0.0, &mut rng)
    })
}

/// Heads straight for the target at full speed, ignoring obstacles.
pub fn straight_line_action(env: &NavEnv) -> Vec<f64> {
    let d = env.config().dims;
    let delta = env.layout().target.position - env.agent();
    let step = env.config().step_size;
    delta.to_array()[..d].iter().map(|v| (v / step).clamp(-1.0, 1.0)).collect()
}

/// Standardized version of a raw reading with the trainer's current statistics, for
/// inspection and plotting.
pub fn standardized_reading(reading: &MagneticReading, stats: &FieldStats) -> (f64, Vec<f64>) {
    let t = standardize(reading.target, stats.target.mean(), stats.target.std(), EPSILON);
    let o = reading.obstacles.iter().zip(&stats.obstacles).map(|(&h, b)| standardize(h, b.mean(), b.std(), EPSILON)).collect();
    (t, o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskVariant;

    fn tiny_env() -> EnvConfig {
        EnvConfig { horizon: 30, ..EnvConfig::for_task(TaskVariant::II) }
    }

    fn tiny_cfg(shaper: ShaperKind) -> TrainConfig {
        TrainConfig {
            shaper,
            ablations: Ablations::default(),
            agent: AgentConfig { hidden: vec![8, 8], batch_size: 16, updates_per_episode: 3, field_nodes: 8, ..AgentConfig::default() },
        }
    }

    fn transition(r: f64, terminal: bool) -> Transition {
        Transition { s: vec![0.1, 0.2, 0.0, 0.0], a: vec![0.5, -0.5], s_next: vec![0.2, 0.1, 0.5, -0.5], reward: r, goal: vec![0.3, 0.3, 0.0, 0.5], terminal }
    }

    fn nets(hidden: &[usize]) -> AgentNets {
        AgentNets::new(AgentDims { state: 4, action: 2, goal: 4 }, hidden, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn act_is_deterministic_without_noise_and_clipped() {
        let n = nets(&[8]);
        let s = [0.1, 0.2, 0.0, 0.0];
        let g = [0.3, 0.3, 0.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = act(&n.actor, &s, &g, 0.0, &mut rng).unwrap();
        let input: Vec<f64> = s.iter().chain(&g).copied().collect();
        assert_eq!(a, n.actor.forward(&input).unwrap());
        for _ in 0..200 {
            let a = act(&n.actor, &s, &g, 5.0, &mut rng).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let x: Vec<_> = (0..5).map(|_| act(&n.actor, &s, &g, 0.4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()).collect();
        assert!(x.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn replay_ring_buffer() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(transition(i as f64, false));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
        assert!(b.sample_indices(4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(ReplayBuffer::new(10).sample(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn critic_loss_with_zero_critic_and_gamma_zero() {
        let mut n = nets(&[8, 8]);
        n.critic.zero_output_layer();
        let ts = [transition(2.0, false), transition(-1.0, false), transition(3.0, true)];
        let batch: Vec<&Transition> = ts.iter().collect();
        let loss = critic_update(&mut n, &batch, 0.0, 1e-3).unwrap();
        assert!((loss - (4.0 + 1.0 + 9.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn terminal_transitions_do_not_bootstrap() {
        let mut n = nets(&[8]);
        // a huge target critic would dominate any bootstrapped target
        for l in n.critic_target.layers_mut() {
            l.bias.fill(1e3);
        }
        n.critic.zero_output_layer();
        let t = transition(5.0, true);
        let loss = critic_update(&mut n, &[&t], 0.99, 1e-3).unwrap();
        assert!((loss - 25.0).abs() < 1e-12);
    }

    #[test]
    fn critic_fits_one_transition() {
        let mut n = nets(&[16, 16]);
        let t = transition(3.0, true);
        for _ in 0..3000 {
            critic_update(&mut n, &[&t], 0.99, 1e-3).unwrap();
        }
        let x: Vec<f64> = t.s.iter().chain(&t.a).chain(&t.goal).copied().collect();
        assert!((n.critic.forward(&x).unwrap()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn constant_critic_leaves_actor_unchanged() {
        let mut n = nets(&[8]);
        for l in n.critic.layers_mut() {
            l.weights.fill(0.0);
        }
        n.critic.layers_mut().last_mut().unwrap().bias.fill(7.0);
        let before = n.actor.clone();
        let ts = [transition(0.0, false), transition(1.0, false)];
        let obj = actor_update(&mut n, &ts.iter().collect::<Vec<_>>(), 3e-4).unwrap();
        assert_eq!(obj, 7.0);
        assert_eq!(n.actor, before);
    }

    #[test]
    fn ablation_labels() {
        assert_eq!(Ablations::default().label(), "full");
        assert_eq!(Ablations { no_nt: true, ..Default::default() }.label(), "no_nt");
        let cfg = TrainConfig { shaper: ShaperKind::Ns, ablations: Ablations { no_mf: true, ..Default::default() }, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn no_shaping_stores_env_reward() {
        let mut tr = Trainer::new(tiny_env(), tiny_cfg(ShaperKind::Ns), 1).unwrap();
        let mut n = 0;
        tr.train(3, &mut |e| {
            if let TrainEvent::Step { env_reward, stored_reward, shaping, .. } = e {
                assert_eq!(*stored_reward, *env_reward);
                assert_eq!(*shaping, 0.0);
                n += 1;
            }
        })
        .unwrap();
        assert!(n > 0);
    }

    #[test]
    fn frozen_zero_potential_gives_no_shaping() {
        let mut cfg = tiny_cfg(ShaperKind::Mfrs);
        cfg.agent.potential_lr = 0.0;
        let mut tr = Trainer::new(tiny_env(), cfg, 2).unwrap();
        tr.train(2, &mut |e| {
            if let TrainEvent::Step { env_reward, stored_reward, .. } = e {
                assert_eq!(stored_reward, env_reward);
            }
        })
        .unwrap();
    }

    #[test]
    fn update_precedes_stats_refresh() {
        let mut tr = Trainer::new(tiny_env(), tiny_cfg(ShaperKind::Mfrs), 3).unwrap();
        let mut log = Vec::new();
        tr.train(3, &mut |e| match e {
            TrainEvent::PolicyUpdate { episode, .. } => log.push(("update", *episode)),
            TrainEvent::StatsUpdate { episode } => log.push(("stats", *episode)),
            _ => {}
        })
        .unwrap();
        // first episode fills the warm-up batch (30 steps > 16)
        assert_eq!(log, vec![("update", 0), ("stats", 0), ("update", 1), ("stats", 1), ("update", 2), ("stats", 2)]);
    }

    #[test]
    fn repeated_seed_is_bitwise_identical() {
        let run = |seed| {
            let mut tr = Trainer::new(tiny_env(), tiny_cfg(ShaperKind::Mfrs), seed).unwrap();
            tr.train(3, &mut |_| {}).unwrap()
        };
        let (a, b) = (run(7), run(7));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(format!("{x:?}"), format!("{y:?}"));
        }
    }

    #[test]
    fn layouts_do_not_depend_on_the_shaper() {
        let first_layouts = |shaper| {
            let mut tr = Trainer::new(tiny_env(), tiny_cfg(shaper), 11).unwrap();
            let mut out = Vec::new();
            for _ in 0..3 {
                tr.run_episode(&mut |_| {}).unwrap();
                out.push(tr.env().layout().clone());
            }
            out
        };
        assert_eq!(first_layouts(ShaperKind::Ns), first_layouts(ShaperKind::Mfrs));
    }

    #[test]
    fn evaluate_reports_rates() {
        let n = nets(&[8]);
        let s = evaluate(tiny_env(), &n.actor, 3, 0).unwrap();
        assert!((0.0..=1.0).contains(&s.success_rate));
        assert!(s.average_timesteps >= 1.0 && s.average_timesteps <= 30.0);
        assert!(evaluate(tiny_env(), &n.actor, 0, 0).is_err());
    }
}
