//! Minibatch gradient-descent training for the interval network and the
//! Gaussian baseline.
//!
//! Training is deterministic given the configuration seed: the shuffle
//! stream is ChaCha12 keyed by `cfg.seed`, and accumulation order is fixed.
//! A network is owned exclusively by its training loop; the returned
//! network is immutable thereafter.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{
    gaussian_raw_loss_grads, monotone_head, pi_loss_raw_grads, Gradients, MeanVarNetwork, Mlp,
    PiNetwork,
};
use crate::data::Subset;
use crate::error::{Error, Result};
use crate::loss::pinball_raw;

/// Gradient-descent update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain stochastic gradient descent.
    Sgd,
    /// Adaptive moment estimation with bias correction.
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam_default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Domain("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Domain(format!(
                "batch size {} outside 1..={n}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A trained interval network with its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub net: PiNetwork,
    pub risk_history: Vec<f64>,
}

/// A trained Gaussian baseline with its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct GaussianFitOutcome {
    pub net: MeanVarNetwork,
    pub risk_history: Vec<f64>,
}

struct OptimizerState {
    first: Gradients,
    second: Gradients,
    step: usize,
}

impl OptimizerState {
    fn new(mlp: &Mlp) -> Self {
        Self {
            first: Gradients::zeros_like(mlp),
            second: Gradients::zeros_like(mlp),
            step: 0,
        }
    }

    fn apply(&mut self, mlp: &mut Mlp, grads: &Gradients, opt: Optimizer, lr: f64) {
        self.step += 1;
        match opt {
            Optimizer::Sgd => {
                for (k, layer) in mlp.layers.iter_mut().enumerate() {
                    for (w, g) in layer.weights.iter_mut().zip(&grads.weights[k]) {
                        *w -= lr * g;
                    }
                    for (b, g) in layer.bias.iter_mut().zip(&grads.bias[k]) {
                        *b -= lr * g;
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step as i32;
                let corr1 = 1.0 - beta1.powi(t);
                let corr2 = 1.0 - beta2.powi(t);
                for (k, layer) in mlp.layers.iter_mut().enumerate() {
                    adam_update(
                        &mut layer.weights,
                        &grads.weights[k],
                        &mut self.first.weights[k],
                        &mut self.second.weights[k],
                        beta1,
                        beta2,
                        epsilon,
                        lr,
                        corr1,
                        corr2,
                    );
                    adam_update(
                        &mut layer.bias,
                        &grads.bias[k],
                        &mut self.first.bias[k],
                        &mut self.second.bias[k],
                        beta1,
                        beta2,
                        epsilon,
                        lr,
                        corr1,
                        corr2,
                    );
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lr: f64,
    corr1: f64,
    corr2: f64,
) {
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(first.iter_mut())
        .zip(second.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Shared minibatch loop: `loss_grad` maps (raw outputs, response) to the
/// sample loss and its gradient with respect to the raw outputs.
fn train_mlp<F>(mlp: &mut Mlp, train: &Subset, cfg: &TrainConfig, loss_grad: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], f64) -> (f64, Vec<f64>),
{
    if train.is_empty() {
        return Err(Error::EmptyData("training subset"));
    }
    if train.dim() != mlp.input_dim {
        return Err(Error::Shape {
            context: "training features",
            expected: mlp.input_dim,
            got: train.dim(),
        });
    }
    cfg.validate(train.len())?;

    let n = train.len();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut scratch = mlp.scratch();
    let mut batch_grads = Gradients::zeros_like(mlp);
    let mut opt_state = OptimizerState::new(mlp);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            batch_grads.zero();
            for &i in batch {
                mlp.forward_into(train.features.row(i), &mut scratch)
                    .map_err(|e| Error::Training {
                        epoch,
                        message: e.to_string(),
                    })?;
                let raw = scratch.activations.last().unwrap().clone();
                let (loss, d_raw) = loss_grad(&raw, train.responses[i]);
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        message: format!("non-finite loss {loss}"),
                    });
                }
                epoch_loss += loss;
                mlp.accumulate_gradients(&mut scratch, &d_raw, &mut batch_grads);
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            opt_state.apply(mlp, &batch_grads, cfg.optimizer, cfg.learning_rate);
            if !mlp.params_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "parameters became non-finite after update".into(),
                });
            }
        }
        history.push(epoch_loss / n as f64);
    }
    Ok(history)
}

/// Train an interval network on the training subset by minimizing the mean
/// composite interval loss at level `tau`.
///
/// `tau = 0` is rejected: that level corresponds to the trivial network
/// with infinite bounds, which is constructed directly rather than trained.
pub fn fit(init: PiNetwork, train: &Subset, tau: f64, cfg: &TrainConfig) -> Result<FitOutcome> {
    if !(0.0 < tau && tau <= 1.0) {
        return Err(Error::Domain(format!(
            "training level tau must lie in (0,1], got {tau}"
        )));
    }
    let mut net = init;
    let history = train_mlp(&mut net.mlp, train, cfg, |raw, y| {
        let triple = monotone_head(raw[0], raw[1], raw[2]).expect("finite raw outputs");
        let loss = pinball_raw(tau / 2.0, y - triple.lower)
            + pinball_raw(0.5, y - triple.median)
            + pinball_raw(1.0 - tau / 2.0, y - triple.upper);
        (loss, pi_loss_raw_grads(raw, &triple, y, tau).to_vec())
    })?;
    Ok(FitOutcome {
        net,
        risk_history: history,
    })
}

/// Train the Gaussian baseline by minimizing the mean negative
/// log-likelihood.
pub fn fit_gaussian(
    init: MeanVarNetwork,
    train: &Subset,
    cfg: &TrainConfig,
) -> Result<GaussianFitOutcome> {
    let mut net = init;
    let history = train_mlp(&mut net.mlp, train, cfg, |raw, y| {
        let (loss, grad) = gaussian_raw_loss_grads(raw, y);
        (loss, grad.to_vec())
    })?;
    Ok(GaussianFitOutcome {
        net,
        risk_history: history,
    })
}
