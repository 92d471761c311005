//! Learned potential over state, action and goal, and the shaping reward derived from it.
//!
//! The potential is trained on-policy with TD target `-r^m + γΦ(s', a', g)`, so that at
//! its fixed point the expected shaping reward equals `r^m`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Mlp, OutputActivation};

/// `δ = -r^m + γΦ(s', a') - Φ(s, a)`.
pub fn td_error(r_m: f64, gamma: f64, phi_sa: f64, phi_next: f64) -> f64 {
    -r_m + gamma * phi_next - phi_sa
}

/// `f = γΦ_{t+1}(s', a') - Φ_t(s, a)`; pass `0` for `phi_after_next` at termination.
pub fn shaping_reward(phi_before: f64, phi_after_next: f64, gamma: f64) -> f64 {
    gamma * phi_after_next - phi_before
}

/// One on-policy step seen by the potential. `next_action` is `None` at a true termination.
#[derive(Debug, Clone, Copy)]
pub struct PotentialStep<'a> {
    pub state: &'a [f64],
    pub action: &'a [f64],
    pub next_state: &'a [f64],
    pub next_action: Option<&'a [f64]>,
    pub goal: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdOutcome {
    /// `½δ²` before the update.
    pub loss: f64,
    pub delta: f64,
    /// Shaping reward with snapshot semantics.
    pub shaping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PotentialDims {
    pub state: usize,
    pub action: usize,
    pub goal: usize,
}

impl PotentialDims {
    pub fn input_len(&self) -> usize {
        self.state + self.action + self.goal
    }
}

/// Network potential `Φ_ψ(s, a, g)` with its own Adam state.
#[derive(Debug, Clone)]
pub struct NetworkPotential {
    net: Mlp,
    adam: AdamState,
    dims: PotentialDims,
    lr: f64,
    gamma: f64,
    input: Vec<f64>,
}

impl NetworkPotential {
    /// Hidden layers are randomly initialized and the output layer is zeroed, so `Φ ≡ 0`.
    pub fn new<R: Rng + ?Sized>(dims: PotentialDims, hidden: &[usize], lr: f64, gamma: f64, rng: &mut R) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) || !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("bad potential lr {lr} or gamma {gamma}")));
        }
        let mut sizes = vec![dims.input_len()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut net = Mlp::new(&sizes, OutputActivation::Linear, rng)?;
        net.zero_output_layer();
        let adam = AdamState::new(&net, AdamConfig::default());
        Ok(NetworkPotential { net, adam, dims, lr, gamma, input: Vec::with_capacity(dims.input_len()) })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn dims(&self) -> PotentialDims {
        self.dims
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn fill_input(&mut self, s: &[f64], a: &[f64], g: &[f64]) -> Result<()> {
        check_len(self.dims.state, s)?;
        check_len(self.dims.action, a)?;
        check_len(self.dims.goal, g)?;
        self.input.clear();
        self.input.extend_from_slice(s);
        self.input.extend_from_slice(a);
        self.input.extend_from_slice(g);
        Ok(())
    }

    pub fn value(&self, s: &[f64], a: &[f64], g: &[f64]) -> Result<f64> {
        check_len(self.dims.state, s)?;
        check_len(self.dims.action, a)?;
        check_len(self.dims.goal, g)?;
        let input: Vec<f64> = s.iter().chain(a).chain(g).copied().collect();
        Ok(self.net.forward(&input)?[0])
    }

    /// One semi-gradient Adam step on `½δ²`, returning the loss and the shaping reward.
    pub fn td_step(&mut self, step: &PotentialStep<'_>, r_m: f64) -> Result<TdOutcome> {
        self.fill_input(step.state, step.action, step.goal)?;
        let x = ArrayView2::from_shape((1, self.input.len()), &self.input).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let (out, tape) = self.net.forward_tape(x)?;
        let phi_sa = out[(0, 0)];
        let phi_next = match step.next_action {
            Some(a_next) => self.value(step.next_state, a_next, step.goal)?,
            None => 0.0,
        };
        let delta = td_error(r_m, self.gamma, phi_sa, phi_next);
        let loss = 0.5 * delta * delta;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("potential loss is {loss}")));
        }
        // ∂(½δ²)/∂Φ(s,a) = -δ with the target held fixed
        let upstream = Array2::from_elem((1, 1), -delta);
        let (grads, _) = self.net.backward(&tape, upstream.view())?;
        adam_step(&mut self.net, &grads, &mut self.adam, self.lr)?;
        let phi_next_after = match step.next_action {
            Some(a_next) => self.value(step.next_state, a_next, step.goal)?,
            None => 0.0,
        };
        let shaping = shaping_reward(phi_sa, phi_next_after, self.gamma);
        ensure_finite("shaping reward", &[shaping])?;
        Ok(TdOutcome { loss, delta, shaping })
    }
}

fn check_len(expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::ShapeMismatch { expected, actual: v.len() });
    }
    Ok(())
}

/// Table potential over enumerated state-action pairs, trained with the same TD rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPotential {
    values: Vec<f64>,
    lr: f64,
    gamma: f64,
}

impl TabularPotential {
    pub fn new(pairs: usize, lr: f64, gamma: f64) -> Result<Self> {
        if pairs == 0 || !(lr >= 0.0 && lr.is_finite()) || !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("bad table: pairs {pairs}, lr {lr}, gamma {gamma}")));
        }
        Ok(TabularPotential { values: vec![0.0; pairs], lr, gamma })
    }

    pub fn value(&self, pair: usize) -> f64 {
        self.values[pair]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `next = None` marks a terminal transition.
    pub fn td_step(&mut self, pair: usize, next: Option<usize>, r_m: f64) -> Result<TdOutcome> {
        let phi_sa = self.values[pair];
        let phi_next = next.map_or(0.0, |n| self.values[n]);
        let delta = td_error(r_m, self.gamma, phi_sa, phi_next);
        let loss = 0.5 * delta * delta;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("potential loss is {loss}")));
        }
        self.values[pair] += self.lr * delta;
        let phi_next_after = next.map_or(0.0, |n| self.values[n]);
        Ok(TdOutcome { loss, delta, shaping: shaping_reward(phi_sa, phi_next_after, self.gamma) })
    }
}

/// A Markov chain over state-action pairs induced by a fixed policy.
///
/// Row `x` of `transitions` lists `(next pair, probability)`; mass missing from a row
/// is the probability of terminating.
#[derive(Debug, Clone, PartialEq)]
pub struct PairChain {
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub reward: Vec<f64>,
}

impl PairChain {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.transitions.len() != n {
            return Err(Error::ShapeMismatch { expected: n, actual: self.transitions.len() });
        }
        for (x, row) in self.transitions.iter().enumerate() {
            let mut total = 0.0;
            for &(y, p) in row {
                if y >= n || !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!("bad transition {x} -> {y} with p = {p}")));
                }
                total += p;
            }
            if total > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!("row {x} sums to {total}")));
            }
        }
        ensure_finite("pair rewards", &self.reward)
    }

    /// `Σ_y P(x, y) Φ(y)`.
    pub fn expected_next(&self, x: usize, phi: &[f64]) -> f64 {
        self.transitions[x].iter().map(|&(y, p)| p * phi[y]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Config {
    pub gamma: f64,
    pub eta: f64,
    pub max_sweeps: usize,
    /// Stop once no entry moves by more than this in a sweep.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    /// `max_x |E[f | x] - r^m(x)|` at the final potential.
    pub gap: f64,
    pub sweeps: usize,
    /// Largest change in the last sweep.
    pub residual: f64,
    pub potential: Vec<f64>,
}

/// Runs synchronous expected TD sweeps of the tabular rule and reports the shaping gap.
pub fn theorem1_check(chain: &PairChain, cfg: &Theorem1Config) -> Result<Theorem1Report> {
    chain.validate()?;
    if !(0.0..=1.0).contains(&cfg.gamma) || !(cfg.eta > 0.0 && cfg.eta <= 1.0) || cfg.max_sweeps == 0 {
        return Err(Error::InvalidArgument(format!("bad checker config {cfg:?}")));
    }
    let n = chain.len();
    let mut phi = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        residual = 0.0;
        for x in 0..n {
            let delta = td_error(chain.reward[x], cfg.gamma, phi[x], chain.expected_next(x, &phi));
            next[x] = phi[x] + cfg.eta * delta;
            residual = f64::max(residual, (next[x] - phi[x]).abs());
        }
        std::mem::swap(&mut phi, &mut next);
        sweeps += 1;
        ensure_finite("potential table", &phi)?;
        if residual <= cfg.tolerance {
            break;
        }
    }
    if residual > cfg.tolerance {
        return Err(Error::NonConvergence { residual, sweeps });
    }
    let gap = (0..n)
        .map(|x| (shaping_reward(phi[x], chain.expected_next(x, &phi), cfg.gamma) - chain.reward[x]).abs())
        .fold(0.0, f64::max);
    Ok(Theorem1Report { gap, sweeps, residual, potential: phi })
}
