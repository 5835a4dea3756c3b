use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_BETAS: (f64, f64) = (0.9, 0.999);
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-3;
pub const ADAM_EPS: f64 = 1e-8;
/// Added under the square root of the RMSE so its gradient stays finite.
pub const RMSE_EPSILON: f64 = 1e-12;

/// `sqrt(mean((p - t)²) + ε)` and its gradient with respect to `p`.
pub fn rmse_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predictions.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            what: "loss targets",
            expected: predictions.len(),
            got: targets.len(),
        });
    }
    let k = predictions.len() as f64;
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / k;
    let loss = (mse + RMSE_EPSILON).sqrt();
    let grad = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) / (k * loss))
        .collect();
    Ok((loss, grad))
}

/// Half-cosine decay from `base_lr` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    let total = total_steps.max(1);
    let s = step.min(total) as f64;
    base_lr * 0.5 * (1.0 + (PI * s / total as f64).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub total_steps: u64,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(n_params: usize, base_lr: f64, weight_decay: f64, total_steps: u64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            base_lr,
            beta1: DEFAULT_BETAS.0,
            beta2: DEFAULT_BETAS.1,
            weight_decay,
            total_steps,
            schedule: LrSchedule::Cosine,
        }
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn current_lr(&self) -> f64 {
        match self.schedule {
            LrSchedule::Cosine => cosine_lr(self.step, self.total_steps, self.base_lr),
            LrSchedule::Constant => self.base_lr,
        }
    }
}

fn check_shapes(params: &[f64], grads: &[f64], n: usize) -> Result<()> {
    if params.len() != grads.len() || params.len() != n {
        return Err(Error::DimensionMismatch {
            what: "optimizer step",
            expected: n,
            got: grads.len().min(params.len()),
        });
    }
    Ok(())
}

/// One decoupled-weight-decay Adam step at the cosine-scheduled rate.
pub fn adamw_step(params: &mut [f64], state: &mut OptimizerState, grads: &[f64]) -> Result<()> {
    check_shapes(params, grads, state.m.len())?;
    let lr = state.current_lr();
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = lr * state.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[i] -= decay * params[i] + lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Plain gradient step at the scheduled rate; moments are untouched.
pub fn gd_step(params: &mut [f64], state: &mut OptimizerState, grads: &[f64]) -> Result<()> {
    check_shapes(params, grads, state.m.len())?;
    let lr = state.current_lr();
    state.step += 1;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}
