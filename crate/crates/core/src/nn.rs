//! Small fully connected networks with hand-written backpropagation and Adam.
//!
//! Batches are row-major: one sample per row. Hidden layers use ReLU; the
//! output layer is linear or a scaled tanh.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
    /// `scale * tanh(z)`.
    Tanh { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `outputs x inputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    output: OutputActivation,
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Network output after the output activation.
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Gradients shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            bias: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in &mut self.bias {
            *b *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.bias.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(sizes, output)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.weights.ncols() as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("layer sizes must be >= 2 positive entries, got {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense { weights: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect();
        Ok(Mlp { layers, output })
    }

    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.nrows() != pair[1].weights.ncols() {
                return Err(Error::ShapeMismatch { expected: pair[0].weights.nrows(), actual: pair[1].weights.ncols() });
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::ShapeMismatch { expected: l.weights.nrows(), actual: l.bias.len() });
            }
        }
        Ok(Mlp { layers, output })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.ncols()];
        s.extend(self.layers.iter().map(|l| l.weights.nrows()));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Zeroes the last layer so the network outputs exactly zero everywhere.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weights.fill(0.0);
            last.bias.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Parameters in layer order, weights (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                let cols = l.weights.ncols();
                return &mut l.weights[(index / cols, index % cols)];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_len() {
            return Err(Error::ShapeMismatch { expected: self.input_len(), actual: cols });
        }
        Ok(())
    }

    fn activate_output(&self, z: &mut Array2<f64>) {
        if let OutputActivation::Tanh { scale } = self.output {
            z.mapv_inplace(|v| scale * v.tanh());
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.weights.t()) + &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                self.activate_output(&mut z);
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.weights.t()) + &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                self.activate_output(&mut z);
            }
            inputs.push(std::mem::replace(&mut h, z));
        }
        Ok((h.clone(), Tape { inputs, output: h }))
    }

    /// Parameter gradients and input gradient of `sum(upstream ⊙ output)`.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if upstream.dim() != tape.output.dim() {
            return Err(Error::ShapeMismatch { expected: tape.output.len(), actual: upstream.len() });
        }
        let mut grad = upstream.to_owned();
        if let OutputActivation::Tanh { scale } = self.output {
            Zip::from(&mut grad).and(&tape.output).for_each(|g, &y| {
                let t = y / scale;
                *g *= scale * (1.0 - t * t);
            });
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut bias = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let input = &tape.inputs[i];
            weights.push(grad.t().dot(input));
            bias.push(grad.sum_axis(Axis(0)));
            let mut back = grad.dot(&self.layers[i].weights);
            if i > 0 {
                // input to layer i is the ReLU output of layer i-1
                Zip::from(&mut back).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grad = back;
        }
        weights.reverse();
        bias.reverse();
        Ok((Gradients { weights, bias }, grad))
    }

    fn check_same_architecture(&self, other: &Mlp) -> Result<()> {
        if self.sizes() != other.sizes() {
            return Err(Error::InvalidArgument(format!(
                "architecture mismatch: {:?} vs {:?}",
                self.sizes(),
                other.sizes()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &SavedMlp::from(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let saved: SavedMlp = serde_json::from_reader(std::io::BufReader::new(file))?;
        saved.try_into()
    }
}

/// On-disk form: an architecture header followed by flat row-major arrays.
#[derive(Debug, Serialize, Deserialize)]
struct SavedMlp {
    format: String,
    sizes: Vec<usize>,
    output: OutputActivation,
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

const SAVE_FORMAT: &str = "mfrs-mlp/1";

impl From<&Mlp> for SavedMlp {
    fn from(net: &Mlp) -> Self {
        SavedMlp {
            format: SAVE_FORMAT.into(),
            sizes: net.sizes(),
            output: net.output,
            weights: net.layers.iter().map(|l| l.weights.iter().copied().collect()).collect(),
            bias: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }
}

impl TryFrom<SavedMlp> for Mlp {
    type Error = Error;

    fn try_from(s: SavedMlp) -> Result<Mlp> {
        if s.format != SAVE_FORMAT {
            return Err(Error::InvalidArgument(format!("unknown network format {:?}", s.format)));
        }
        if s.sizes.len() < 2 || s.weights.len() != s.sizes.len() - 1 || s.bias.len() != s.weights.len() {
            return Err(Error::InvalidArgument("layer count does not match header".into()));
        }
        let layers = s
            .sizes
            .windows(2)
            .zip(s.weights.into_iter().zip(s.bias))
            .map(|(io, (w, b))| {
                let weights = Array2::from_shape_vec((io[1], io[0]), w).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(Dense { weights, bias: Array1::from(b) })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, s.output)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for every parameter of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        AdamState { config, step: 0, m: Gradients::zeros_like(net), v: Gradients::zeros_like(net) }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam descent step on `net` along `grads`.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    if grads.weights.len() != net.layers.len() {
        return Err(Error::ShapeMismatch { expected: net.layers.len(), actual: grads.weights.len() });
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for (i, layer) in net.layers.iter_mut().enumerate() {
        if layer.weights.dim() != grads.weights[i].dim() {
            return Err(Error::ShapeMismatch { expected: layer.weights.len(), actual: grads.weights[i].len() });
        }
        Zip::from(&mut layer.weights)
            .and(&mut state.m.weights[i])
            .and(&mut state.v.weights[i])
            .and(&grads.weights[i])
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut state.m.bias[i])
            .and(&mut state.v.bias[i])
            .and(&grads.bias[i])
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

/// `target ← (1 - τ)·target + τ·online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    target.check_same_architecture(online)?;
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weights).and(&o.weights).for_each(|a, &b| *a = (1.0 - tau) * *a + tau * b);
        Zip::from(&mut t.bias).and(&o.bias).for_each(|a, &b| *a = (1.0 - tau) * *a + tau * b);
    }
    Ok(())
}

/// Largest relative error between backward-pass and central-difference parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_err: f64,
}

/// Compares gradients of `sum(upstream ⊙ net(x))` at `probes` random parameters.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<R: Rng + ?Sized>(
    net: &Mlp,
    x: ArrayView2<f64>,
    upstream: ArrayView2<f64>,
    probes: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheck> {
    let (_, tape) = net.forward_tape(x)?;
    let analytic = net.backward(&tape, upstream)?.0.flatten();
    let loss = |n: &Mlp| -> Result<f64> { Ok((&n.forward_batch(x)? * &upstream).sum()) };
    let mut probe = net.clone();
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..probes {
        let idx = rng.random_range(0..analytic.len());
        let orig = *probe.param_mut(idx);
        *probe.param_mut(idx) = orig + step;
        let plus = loss(&probe)?;
        *probe.param_mut(idx) = orig - step;
        let minus = loss(&probe)?;
        *probe.param_mut(idx) = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(GradCheck { probes, max_rel_err })
}
