//! Feed-forward networks with a three-output monotone head.
//!
//! [`PiNetwork`] maps a `d`-dimensional input through ReLU hidden layers to
//! three raw outputs, then through a fixed head that enforces
//! `lower ≤ median ≤ upper`. [`MeanVarNetwork`] is the two-output Gaussian
//! baseline (mean plus softplus-positive variance). Both are plain data
//! after construction: evaluation never mutates, so trained networks can be
//! shared freely across threads.

mod train;

pub use train::{fit, fit_gaussian, FitOutcome, GaussianFitOutcome, Optimizer, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::pinball_grad;

/// An ordered triple of interval bounds around a median estimate.
///
/// The infinities are first-class: the pair `(-∞, +∞)` represents the
/// trivial always-covering interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiTriple {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

impl PiTriple {
    pub fn new(lower: f64, median: f64, upper: f64) -> Result<Self> {
        if median.is_nan() || lower.is_nan() || upper.is_nan() {
            return Err(Error::NonFinite("interval triple".into()));
        }
        if !median.is_finite() {
            return Err(Error::NonFinite("interval triple median".into()));
        }
        if !(lower <= median && median <= upper) {
            return Err(Error::Domain(format!(
                "triple ({lower}, {median}, {upper}) is not ordered"
            )));
        }
        let both_finite = lower.is_finite() && upper.is_finite();
        let both_infinite = lower == f64::NEG_INFINITY && upper == f64::INFINITY;
        if !(both_finite || both_infinite) {
            return Err(Error::Domain(
                "triple endpoints must be both finite or both infinite".into(),
            ));
        }
        Ok(Self {
            lower,
            median,
            upper,
        })
    }

    /// The triple of the trivial network: `(-∞, +∞)` bounds. The median is
    /// a placeholder and carries no information.
    pub fn trivial() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            median: 0.0,
            upper: f64::INFINITY,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }

    pub fn interval(&self) -> PiInterval {
        PiInterval {
            lower: self.lower,
            upper: self.upper,
        }
    }
}

/// A closed interval with extended-real endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiInterval {
    pub lower: f64,
    pub upper: f64,
}

impl PiInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::Domain(format!(
                "invalid interval [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Closed-interval membership under extended-real ordering.
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Anything that maps a feature vector to an interval triple.
///
/// Implementations may assume the input has the dimension they were built
/// for; passing a wrong-sized slice is a programmer error and may panic.
pub trait Predictor {
    fn predict_triple(&self, x: &[f64]) -> PiTriple;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict_triple(&self, x: &[f64]) -> PiTriple {
        (**self).predict_triple(x)
    }
}

/// Adapter turning a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&[f64]) -> PiTriple> Predictor for FnPredictor<F> {
    fn predict_triple(&self, x: &[f64]) -> PiTriple {
        (self.0)(x)
    }
}

/// Order three raw outputs into a valid triple:
/// `l = z1`, `m = l + max(0, z2 - l)`, `u = m + max(0, z3 - m)`.
pub fn monotone_head(z1: f64, z2: f64, z3: f64) -> Result<PiTriple> {
    if !z1.is_finite() || !z2.is_finite() || !z3.is_finite() {
        return Err(Error::NonFinite("monotone head input".into()));
    }
    let lower = z1;
    let median = lower + (z2 - lower).max(0.0);
    let upper = median + (z3 - median).max(0.0);
    PiTriple::new(lower, median, upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Subgradient; ReLU takes 0 at the kink.
    #[inline]
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One affine layer with row-major weights (`out_dim × in_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    weights: Vec<f64>,
    bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

impl Layer {
    pub fn new(
        weights: Vec<f64>,
        bias: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::Shape {
                context: "layer weights",
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::Shape {
                context: "layer bias",
                expected: out_dim,
                got: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            weights,
            bias,
            in_dim,
            out_dim,
            activation,
        })
    }

    fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha12Rng) -> Self {
        // fan-in scaled uniform initialization, seeded
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            weights,
            bias,
            in_dim,
            out_dim,
            activation,
        }
    }

    /// Structural integrity of a layer that may have bypassed the
    /// constructor (deserialized documents).
    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::Shape {
                context: "layer weights",
                expected: self.in_dim * self.out_dim,
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::Shape {
                context: "layer bias",
                expected: self.out_dim,
                got: self.bias.len(),
            });
        }
        if self.out_dim == 0 {
            return Err(Error::Domain("layer has no outputs".into()));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Per-layer parameter gradients, same shapes as the layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub(crate) fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            bias: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub(crate) fn zero(&mut self) {
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        for b in &mut self.bias {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.bias {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Weight gradients of one layer, row-major.
    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn layer_bias(&self, layer: usize) -> &[f64] {
        &self.bias[layer]
    }

    /// All gradients in the flat parameter order used by
    /// [`PiNetwork::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Shared multilayer-perceptron body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Mlp {
    pub(crate) input_dim: usize,
    pub(crate) layers: Vec<Layer>,
}

/// Reusable forward-pass buffers.
#[derive(Debug, Clone, Default)]
pub(crate) struct Scratch {
    /// Post-activation values per layer; `activations[0]` is the input.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Mlp {
    fn init(input_dim: usize, hidden: &[usize], out_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Domain("input dimension must be at least 1".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::Domain("hidden layers must be non-empty".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Layer::init(prev, h, Activation::Relu, &mut rng));
            prev = h;
        }
        layers.push(Layer::init(prev, out_dim, Activation::Linear, &mut rng));
        Ok(Self { input_dim, layers })
    }

    fn from_parts(input_dim: usize, layers: Vec<Layer>, out_dim: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("network needs at least one layer".into()));
        }
        let mut prev = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_dim != prev {
                return Err(Error::Shape {
                    context: "layer input dimension",
                    expected: prev,
                    got: layer.in_dim,
                });
            }
            let last = i + 1 == layers.len();
            let want = if last {
                Activation::Linear
            } else {
                Activation::Relu
            };
            if layer.activation != want {
                return Err(Error::Domain(format!(
                    "layer {i} must use {want:?} activation"
                )));
            }
            prev = layer.out_dim;
        }
        if prev != out_dim {
            return Err(Error::Shape {
                context: "output layer",
                expected: out_dim,
                got: prev,
            });
        }
        Ok(Self { input_dim, layers })
    }

    pub(crate) fn scratch(&self) -> Scratch {
        Scratch {
            activations: std::iter::once(vec![0.0; self.input_dim])
                .chain(self.layers.iter().map(|l| vec![0.0; l.out_dim]))
                .collect(),
            pre: self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            delta: vec![0.0; self.max_width()],
            delta_next: vec![0.0; self.max_width()],
        }
    }

    fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim)
            .max()
            .unwrap_or(0)
            .max(self.input_dim)
    }

    /// Forward pass filling `scratch`; the raw outputs end up in the last
    /// activation buffer. A non-finite intermediate is reported with the
    /// index of the layer that produced it.
    pub(crate) fn forward_into(&self, x: &[f64], scratch: &mut Scratch) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                context: "network input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        scratch.activations[0].copy_from_slice(x);
        for (k, layer) in self.layers.iter().enumerate() {
            // split_at_mut to borrow input and output buffers disjointly
            let (head, tail) = scratch.activations.split_at_mut(k + 1);
            let input = &head[k];
            let out = &mut tail[0];
            let pre = &mut scratch.pre[k];
            for ((z, row), b) in pre
                .iter_mut()
                .zip(layer.weights.chunks_exact(layer.in_dim))
                .zip(&layer.bias)
            {
                let dot: f64 = row.iter().zip(input.iter()).map(|(w, a)| w * a).sum();
                *z = dot + b;
            }
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} pre-activation")));
            }
            for (a, &z) in out.iter_mut().zip(pre.iter()) {
                *a = layer.activation.apply(z);
            }
        }
        Ok(())
    }

    pub(crate) fn raw_output<'s>(&self, scratch: &'s Scratch) -> &'s [f64] {
        scratch.activations.last().expect("at least one layer")
    }

    /// Accumulate parameter gradients for one sample into `grads`, given the
    /// gradient of the loss with respect to the raw outputs.
    pub(crate) fn accumulate_gradients(
        &self,
        scratch: &mut Scratch,
        d_raw: &[f64],
        grads: &mut Gradients,
    ) {
        let n_layers = self.layers.len();
        scratch.delta[..d_raw.len()].copy_from_slice(d_raw);
        for k in (0..n_layers).rev() {
            let layer = &self.layers[k];
            // delta currently holds dL/d(post-activation of layer k);
            // fold in the activation derivative to get dL/dz
            for (d, &z) in scratch.delta[..layer.out_dim]
                .iter_mut()
                .zip(scratch.pre[k].iter())
            {
                *d *= layer.activation.grad(z);
            }
            let input = &scratch.activations[k];
            let gw = &mut grads.weights[k];
            let gb = &mut grads.bias[k];
            for (i, &d) in scratch.delta[..layer.out_dim].iter().enumerate() {
                gb[i] += d;
                let row = &mut gw[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (g, &a) in row.iter_mut().zip(input.iter()) {
                    *g += d * a;
                }
            }
            if k > 0 {
                let prev_dim = layer.in_dim;
                scratch.delta_next[..prev_dim]
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
                for (i, &d) in scratch.delta[..layer.out_dim].iter().enumerate() {
                    let row = &layer.weights[i * prev_dim..(i + 1) * prev_dim];
                    for (acc, &w) in scratch.delta_next[..prev_dim].iter_mut().zip(row) {
                        *acc += w * d;
                    }
                }
                let (delta, delta_next) = (&mut scratch.delta, &mut scratch.delta_next);
                std::mem::swap(delta, delta_next);
            }
        }
    }

    pub(crate) fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub(crate) fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self
            .layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        if params.len() != total {
            return Err(Error::Shape {
                context: "flat parameters",
                expected: total,
                got: params.len(),
            });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub(crate) fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Gradient of the monotone head: maps loss gradients with respect to
/// `(lower, median, upper)` back to the three raw outputs. The ReLU
/// subgradient at the kink is 0.
#[inline]
fn head_backward(raw: &[f64], triple: &PiTriple, gl: f64, gm: f64, gu: f64) -> [f64; 3] {
    let a = if raw[1] - triple.lower > 0.0 {
        1.0
    } else {
        0.0
    };
    let b = if raw[2] - triple.median > 0.0 {
        1.0
    } else {
        0.0
    };
    let dz3 = gu * b;
    let g_median = gm + gu * (1.0 - b);
    let dz2 = g_median * a;
    let dz1 = gl + g_median * (1.0 - a);
    [dz1, dz2, dz3]
}

/// Loss gradient with respect to the ordered triple for the composite
/// interval loss at level `tau`.
#[inline]
pub(crate) fn pi_loss_triple_grads(triple: &PiTriple, y: f64, tau: f64) -> (f64, f64, f64) {
    let gl = -pinball_grad(tau / 2.0, y - triple.lower);
    let gm = -pinball_grad(0.5, y - triple.median);
    let gu = -pinball_grad(1.0 - tau / 2.0, y - triple.upper);
    (gl, gm, gu)
}

/// Gradient of the composite loss with respect to the three raw outputs.
#[inline]
pub(crate) fn pi_loss_raw_grads(raw: &[f64], triple: &PiTriple, y: f64, tau: f64) -> [f64; 3] {
    let (gl, gm, gu) = pi_loss_triple_grads(triple, y, tau);
    head_backward(raw, triple, gl, gm, gu)
}

/// A feed-forward network emitting an ordered interval triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiNetwork {
    mlp: Mlp,
}

impl PiNetwork {
    /// Fresh network with seeded fan-in-scaled uniform initialization.
    ///
    /// The output-layer biases of the second and third raw outputs are
    /// offset upward (+1 and +2) so the monotone head starts with strictly
    /// positive widths. Without the offset the head's rectifiers can begin
    /// inactive for every input and receive zero gradient forever,
    /// collapsing the interval onto the median.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut mlp = Mlp::init(input_dim, hidden, 3, seed)?;
        let out = mlp.layers.last_mut().expect("at least one layer");
        out.bias[1] += 1.0;
        out.bias[2] += 2.0;
        Ok(Self { mlp })
    }

    /// Build from explicit layers (used by deserialization and tests).
    /// Hidden layers must be ReLU and the final layer linear with three
    /// outputs.
    pub fn from_parts(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::from_parts(input_dim, layers, 3)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.mlp.layers
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let n = self.mlp.layers.len();
        self.mlp.layers[..n - 1].iter().map(|l| l.out_dim).collect()
    }

    /// Evaluate the network, yielding an ordered triple.
    pub fn forward(&self, x: &[f64]) -> Result<PiTriple> {
        let mut scratch = self.mlp.scratch();
        self.mlp.forward_into(x, &mut scratch)?;
        let raw = self.mlp.raw_output(&scratch);
        monotone_head(raw[0], raw[1], raw[2])
    }

    /// Gradient of the composite interval loss at level `tau` with respect
    /// to every parameter, for a single observation.
    pub fn backward(&self, x: &[f64], y: f64, tau: f64) -> Result<Gradients> {
        if !(0.0 < tau && tau <= 1.0) {
            return Err(Error::Domain(format!("loss level {tau} outside (0,1]")));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient inputs".into()));
        }
        let mut scratch = self.mlp.scratch();
        self.mlp.forward_into(x, &mut scratch)?;
        let raw = self.mlp.raw_output(&scratch).to_vec();
        let triple = monotone_head(raw[0], raw[1], raw[2])?;
        let d_raw = pi_loss_raw_grads(&raw, &triple, y, tau);
        let mut grads = Gradients::zeros_like(&self.mlp);
        self.mlp
            .accumulate_gradients(&mut scratch, &d_raw, &mut grads);
        Ok(grads)
    }

    /// All parameters in a fixed flat order (per layer: weights row-major,
    /// then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        self.mlp.flat_params()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        self.mlp.set_flat_params(params)
    }

    /// Smallest distance of any quantity from a kink of the piecewise
    /// linear loss surface at `(x, y)`: hidden pre-activations, the two
    /// head gaps, and the three residuals. Finite-difference gradient
    /// checks are only meaningful at points where this margin exceeds the
    /// probe step.
    pub fn kink_margin(&self, x: &[f64], y: f64) -> Result<f64> {
        let mut scratch = self.mlp.scratch();
        self.mlp.forward_into(x, &mut scratch)?;
        let mut margin = f64::INFINITY;
        for (k, layer) in self.mlp.layers.iter().enumerate() {
            if layer.activation == Activation::Relu {
                for &z in &scratch.pre[k] {
                    margin = margin.min(z.abs());
                }
            }
        }
        let raw = self.mlp.raw_output(&scratch);
        let t = monotone_head(raw[0], raw[1], raw[2])?;
        margin = margin.min((raw[1] - t.lower).abs());
        margin = margin.min((raw[2] - t.median).abs());
        margin = margin.min((y - t.lower).abs());
        margin = margin.min((y - t.median).abs());
        margin = margin.min((y - t.upper).abs());
        Ok(margin)
    }
}

impl Predictor for PiNetwork {
    fn predict_triple(&self, x: &[f64]) -> PiTriple {
        self.forward(x)
            .expect("input dimension must match the network")
    }
}

/// Numerically stable `ln(1 + e^s)`.
#[inline]
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Variance floor of the Gaussian baseline head.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Two-output network for the Gaussian negative-log-likelihood baseline:
/// the first raw output is the mean, the second maps through
/// `softplus(s) + 1e-6` to a positive variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanVarNetwork {
    mlp: Mlp,
}

impl MeanVarNetwork {
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::init(input_dim, hidden, 2, seed)?,
        })
    }

    pub fn from_parts(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::from_parts(input_dim, layers, 2)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.mlp.layers
    }

    /// Predicted mean and variance at `x`.
    pub fn predict_mean_var(&self, x: &[f64]) -> Result<(f64, f64)> {
        let mut scratch = self.mlp.scratch();
        self.mlp.forward_into(x, &mut scratch)?;
        let raw = self.mlp.raw_output(&scratch);
        Ok((raw[0], softplus(raw[1]) + VARIANCE_FLOOR))
    }
}

/// Gaussian NLL and its gradient with respect to the two raw outputs.
#[inline]
pub(crate) fn gaussian_raw_loss_grads(raw: &[f64], y: f64) -> (f64, [f64; 2]) {
    let mu = raw[0];
    let var = softplus(raw[1]) + VARIANCE_FLOOR;
    let resid = y - mu;
    let loss = 0.5 * (2.0 * std::f64::consts::PI * var).ln() + resid * resid / (2.0 * var);
    let d_mu = (mu - y) / var;
    let d_var = 0.5 / var - resid * resid / (2.0 * var * var);
    (loss, [d_mu, d_var * sigmoid(raw[1])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_3x3() -> PiNetwork {
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let layer = Layer::new(w, vec![0.0; 3], 3, 3, Activation::Linear).unwrap();
        PiNetwork::from_parts(3, vec![layer]).unwrap()
    }

    #[test]
    fn head_orders_outputs() {
        let t = monotone_head(1.0, 0.5, 2.0).unwrap();
        assert_eq!((t.lower, t.median, t.upper), (1.0, 1.0, 2.0));
        let t = monotone_head(0.0, 0.0, 0.0).unwrap();
        assert_eq!((t.lower, t.median, t.upper), (0.0, 0.0, 0.0));
        let t = monotone_head(-1.0, 0.0, 3.0).unwrap();
        assert_eq!((t.lower, t.median, t.upper), (-1.0, 0.0, 3.0));
        assert!(monotone_head(f64::NAN, 0.0, 0.0).is_err());
        assert!(monotone_head(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn forward_identity_net() {
        let net = identity_3x3();
        let t = net.forward(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((t.lower, t.median, t.upper), (0.0, 0.0, 0.0));
        let t = net.forward(&[-1.0, 2.0, 0.5]).unwrap();
        // raw (-1, 2, 0.5) -> head gives (-1, 2, 2)
        assert_eq!((t.lower, t.median, t.upper), (-1.0, 2.0, 2.0));
    }

    #[test]
    fn forward_checks_dimensions() {
        let net = PiNetwork::init(4, &[8], 3).unwrap();
        assert!(net.forward(&[0.0; 3]).is_err());
        assert!(net.forward(&[0.0; 4]).is_ok());
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // naive index loops on purpose
    fn forward_matches_hand_rolled_reference() {
        // independent dense forward pass over the same weights
        let net = PiNetwork::init(3, &[5], 99).unwrap();
        let x = [0.3, -0.8, 1.2];
        let l0 = &net.layers()[0];
        let mut hidden = [0.0; 5];
        for i in 0..5 {
            let mut acc = l0.bias()[i];
            for j in 0..3 {
                acc += l0.weights()[i * 3 + j] * x[j];
            }
            hidden[i] = acc.max(0.0);
        }
        let l1 = &net.layers()[1];
        let mut raw = [0.0; 3];
        for i in 0..3 {
            let mut acc = l1.bias()[i];
            for j in 0..5 {
                acc += l1.weights()[i * 5 + j] * hidden[j];
            }
            raw[i] = acc;
        }
        let want = monotone_head(raw[0], raw[1], raw[2]).unwrap();
        let got = net.forward(&x).unwrap();
        assert!((got.lower - want.lower).abs() < 1e-14);
        assert!((got.median - want.median).abs() < 1e-14);
        assert!((got.upper - want.upper).abs() < 1e-14);
    }

    #[test]
    fn triple_rejects_half_infinite() {
        assert!(PiTriple::new(f64::NEG_INFINITY, 0.0, 1.0).is_err());
        assert!(PiTriple::new(0.0, 0.0, f64::INFINITY).is_err());
        assert!(PiTriple::new(f64::NEG_INFINITY, 0.0, f64::INFINITY).is_ok());
        assert!(PiTriple::trivial().is_trivial());
    }

    #[test]
    fn zero_network_gradients() {
        // All-zero parameters at y = 0: every activation is zero, so all
        // weight gradients and hidden bias gradients vanish. The output
        // bias picks up the chosen kink subgradients, which sum to 1.5 on
        // the first raw output (the two head ReLUs are inactive at 0, so
        // all three loss slopes flow to z1).
        let layers = vec![
            Layer::new(vec![0.0; 8], vec![0.0; 4], 2, 4, Activation::Relu).unwrap(),
            Layer::new(vec![0.0; 12], vec![0.0; 3], 4, 3, Activation::Linear).unwrap(),
        ];
        let net = PiNetwork::from_parts(2, layers).unwrap();
        let g = net.backward(&[0.5, -0.5], 0.0, 0.2).unwrap();
        assert!(g.layer_weights(0).iter().all(|&v| v == 0.0));
        assert!(g.layer_bias(0).iter().all(|&v| v == 0.0));
        assert!(g.layer_weights(1).iter().all(|&v| v == 0.0));
        assert_eq!(g.layer_bias(1), &[1.5, 0.0, 0.0]);
    }

    fn central_difference(net: &PiNetwork, x: &[f64], y: f64, tau: f64, h: f64) -> Vec<f64> {
        let base = net.flat_params();
        let mut out = Vec::with_capacity(base.len());
        let mut probe = net.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_flat_params(&p).unwrap();
            let up = crate::loss::pi_loss(&probe.forward(x).unwrap(), y, tau).unwrap();
            p[i] = base[i] - h;
            probe.set_flat_params(&p).unwrap();
            let down = crate::loss::pi_loss(&probe.forward(x).unwrap(), y, tau).unwrap();
            out.push((up - down) / (2.0 * h));
        }
        out
    }

    /// Reject configurations with any residual, head gap, or hidden
    /// pre-activation within `margin` of a kink.
    fn away_from_kinks(net: &PiNetwork, x: &[f64], y: f64, margin: f64) -> bool {
        net.kink_margin(x, y).unwrap() > margin
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(314);
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 10 {
            attempts += 1;
            assert!(attempts < 500, "could not find kink-free configurations");
            let seed: u64 = rng.gen();
            let net = PiNetwork::init(3, &[6], seed).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: f64 = rng.gen_range(-2.0..2.0);
            let tau: f64 = rng.gen_range(0.05..0.5);
            if !away_from_kinks(&net, &x, y, 1e-3) {
                continue;
            }
            let analytic = net.backward(&x, y, tau).unwrap().flatten();
            let numeric = central_difference(&net, &x, y, tau, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs()).max(1e-6);
                assert!(
                    (a - n).abs() / denom <= 1e-5,
                    "gradient mismatch: analytic {a}, numeric {n}"
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn tau_scaling_matches_finite_differences() {
        // doubling tau changes only the lower/upper pinball slopes; both
        // levels must still agree with finite differences
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2718);
        let mut done = false;
        for _ in 0..200 {
            let seed: u64 = rng.gen();
            let net = PiNetwork::init(2, &[4], seed).unwrap();
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: f64 = rng.gen_range(-2.0..2.0);
            if !away_from_kinks(&net, &x, y, 1e-3) {
                continue;
            }
            for tau in [0.1, 0.2] {
                let analytic = net.backward(&x, y, tau).unwrap().flatten();
                let numeric = central_difference(&net, &x, y, tau, 1e-5);
                for (a, n) in analytic.iter().zip(&numeric) {
                    let denom = a.abs().max(n.abs()).max(1e-6);
                    assert!((a - n).abs() / denom <= 1e-5);
                }
            }
            done = true;
            break;
        }
        assert!(done, "no kink-free configuration found");
    }

    #[test]
    fn gaussian_head_gradients_match_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(55);
        for _ in 0..20 {
            let raw = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let y = rng.gen_range(-2.0..2.0);
            let (_, grad) = gaussian_raw_loss_grads(&raw, y);
            for i in 0..2 {
                let h = 1e-6;
                let mut up = raw;
                up[i] += h;
                let mut down = raw;
                down[i] -= h;
                let numeric = (gaussian_raw_loss_grads(&up, y).0
                    - gaussian_raw_loss_grads(&down, y).0)
                    / (2.0 * h);
                assert!(
                    (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6) < 1e-4,
                    "gaussian grad {i}: {} vs {numeric}",
                    grad[i]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn head_output_is_always_ordered(
            z1 in -1e9f64..1e9,
            z2 in -1e9f64..1e9,
            z3 in -1e9f64..1e9,
        ) {
            let t = monotone_head(z1, z2, z3).unwrap();
            prop_assert!(t.lower <= t.median && t.median <= t.upper);
            prop_assert_eq!(t.lower, z1);
        }
    }
}
