//! ε-prediction training, the direct supervised baseline, and Adam.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::PairedDataset;
use crate::denoiser::{
    Checkpoint, ConvDenoiser, LayerInfo, NoisePredictor, TimeArg, TrainMode, TrainingMeta,
};
use crate::diffusion::forward_marginal_sample;
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, Role, StreamKey};
use crate::schedule::VarianceSchedule;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            max_iterations: 1000,
            seed: 0,
            mode: TrainMode::Ddpm,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::domain("max iterations must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::domain("Adam decay rates must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::domain("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates and step counter for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients are rejected before
/// anything is modified, naming the offending layer.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    layers: &[LayerInfo],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::Data(format!(
            "Adam length mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        let layer = layers
            .iter()
            .find(|l| l.range().contains(&i))
            .map_or("<unknown>", |l| l.name);
        return Err(Error::NonFiniteGradient { layer });
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let correction1 = 1.0 - b1.powi(state.step as i32);
    let correction2 = 1.0 - b2.powi(state.step as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
    }
    Ok(())
}

/// Mean squared error between `prediction` and `target` and its gradient
/// with respect to `prediction`.
pub fn mse_with_grad(prediction: &ImageTensor, target: &ImageTensor) -> Result<(f64, ImageTensor)> {
    prediction.ensure_same_shape(target)?;
    let n = prediction.len() as f64;
    let diff = target.sub(prediction);
    let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(-2.0 / n)))
}

/// Unweighted ε-prediction loss `mean((ε − D(y_t, x, t))²)` with
/// `y_t = √ᾱ_t·y_0 + √(1−ᾱ_t)·ε`, and its gradient w.r.t. the prediction.
pub fn ddpm_loss<P: NoisePredictor + ?Sized>(
    y0: &ImageTensor,
    x: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<(f64, ImageTensor)> {
    y0.ensure_same_shape(x)?;
    let y_t = forward_marginal_sample(y0, t, eps, schedule)?;
    let pred = net.predict(&y_t, Some(x), TimeArg::Discrete(t), schedule)?;
    mse_with_grad(&pred, eps)
}

/// Supervised baseline: the network maps the low-dose input straight to the
/// target, run as `D(x, x, t = 0)`.
pub fn baseline_loss<P: NoisePredictor + ?Sized>(
    x: &ImageTensor,
    y0: &ImageTensor,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<(f64, ImageTensor)> {
    x.ensure_same_shape(y0)?;
    let pred = net.predict(x, Some(x), TimeArg::Discrete(1), schedule)?;
    mse_with_grad(&pred, y0)
}

/// The weight dropped from the variational ε-objective,
/// `(1−α_t)² / (2σ_t²·ᾱ_t·(1−ᾱ_t))` with σ_t the posterior std. At t = 1
/// the posterior variance is zero; β_1 stands in so the value stays finite.
pub fn variational_weight(t: usize, schedule: &VarianceSchedule) -> f64 {
    let beta = schedule.beta(t);
    let var = if t == 1 {
        beta
    } else {
        schedule.sigma_posterior(t).powi(2)
    };
    let ab = schedule.alpha_bar(t);
    beta * beta / (2.0 * var * ab * (1.0 - ab))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    /// Batch mean of the loss scaled by `variational_weight`; logged only.
    pub weighted_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossRecord>,
}

struct ElementEval {
    loss: f64,
    weighted: f64,
    grad: Vec<f64>,
}

fn eval_element(
    net: &ConvDenoiser,
    dataset: &PairedDataset,
    config: &TrainConfig,
    schedule: &VarianceSchedule,
    key: StreamKey,
    iteration: usize,
    element: usize,
) -> Result<ElementEval> {
    let counters = [iteration as u64, element as u64];
    let idx = key
        .stream(Role::DataOrder, &counters)
        .random_range(0..dataset.len());
    let (ldct, ndct) = dataset.pair(idx);
    match config.mode {
        TrainMode::Ddpm => {
            let t = key
                .stream(Role::TimeStep, &counters)
                .random_range(1..=schedule.steps());
            let eps = normal_tensor(&mut key.stream(Role::TrainNoise, &counters), ndct.shape());
            let y_t = forward_marginal_sample(ndct, t, &eps, schedule)?;
            let tau = ConvDenoiser::time_position(TimeArg::Discrete(t), schedule)?;
            let (pred, cache) = net.forward_cached(&y_t, Some(ldct), tau)?;
            let (loss, grad_out) = mse_with_grad(&pred, &eps)?;
            Ok(ElementEval {
                loss,
                weighted: loss * variational_weight(t, schedule),
                grad: net.backward(&cache, &grad_out)?,
            })
        }
        TrainMode::Baseline => {
            let (pred, cache) = net.forward_cached(ldct, Some(ldct), 0.0)?;
            let (loss, grad_out) = mse_with_grad(&pred, ndct)?;
            Ok(ElementEval {
                loss,
                weighted: loss,
                grad: net.backward(&cache, &grad_out)?,
            })
        }
    }
}

/// Runs `config.max_iterations` optimizer steps. Every random choice (pair,
/// time step, noise) is drawn from a stream keyed by (seed, iteration,
/// batch element), and batch gradients are summed in element order, so the
/// result is bitwise reproducible regardless of thread count.
pub fn train(
    dataset: &PairedDataset,
    mut net: ConvDenoiser,
    config: &TrainConfig,
    schedule: &VarianceSchedule,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let key = StreamKey::new(config.seed);
    let layers = net.layers();
    let mut adam = AdamState::new(net.params().len());
    let mut history = Vec::with_capacity(config.max_iterations);
    let inv_batch = 1.0 / config.batch_size as f64;

    for iteration in 0..config.max_iterations {
        let evals: Vec<ElementEval> = (0..config.batch_size)
            .into_par_iter()
            .map(|b| eval_element(&net, dataset, config, schedule, key, iteration, b))
            .collect::<Result<_>>()?;

        let mut grad = vec![0.0; net.params().len()];
        let (mut loss, mut weighted) = (0.0, 0.0);
        for e in &evals {
            loss += e.loss;
            weighted += e.weighted;
            for (g, v) in grad.iter_mut().zip(&e.grad) {
                *g += v;
            }
        }
        loss *= inv_batch;
        weighted *= inv_batch;
        grad.iter_mut().for_each(|g| *g *= inv_batch);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        adam_step(net.params_mut(), &grad, &layers, &mut adam, config)?;
        history.push(LossRecord {
            iteration,
            loss,
            weighted_loss: weighted,
        });
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            schedule: schedule.descriptor(),
            net,
            meta: TrainingMeta {
                mode: config.mode,
                iterations: config.max_iterations as u64,
                seed: config.seed,
            },
        },
        history,
    })
}

pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("iteration,loss,diagnostic_weighted_loss\n");
    for r in history {
        writeln!(out, "{},{:.17e},{:.17e}", r.iteration, r.loss, r.weighted_loss).unwrap();
    }
    out
}

pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    std::fs::write(path, loss_history_csv(history))?;
    Ok(())
}
