//! First-order optimizers over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::tensor::Tensor;

fn check_len(op: &'static str, param: &[f64], grad: &[f64], state: &[f64]) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.len() {
        return Err(Error::dim(op, &[param.len()], &[grad.len(), state.len()]));
    }
    Ok(())
}

/// `velocity = momentum·velocity + grad; param -= lr·velocity`.
pub fn sgd_momentum_step(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    check_len("sgd_momentum_step", param, grad, velocity)?;
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates and step counter of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update; increments `state.t` first.
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, h: AdamHyper) -> Result<()> {
    check_len("adam_step", param, grad, &state.m)?;
    check_len("adam_step", param, grad, &state.v)?;
    state.t += 1;
    let c1 = 1.0 - h.beta1.powf(state.t as f64);
    let c2 = 1.0 - h.beta2.powf(state.t as f64);
    for (k, (p, &g)) in param.iter_mut().zip(grad).enumerate() {
        let m = h.beta1 * state.m[k] + (1.0 - h.beta1) * g;
        let v = h.beta2 * state.v[k] + (1.0 - h.beta2) * g * g;
        state.m[k] = m;
        state.v[k] = v;
        *p -= lr * (m / c1) / ((v / c2).sqrt() + h.epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    #[default]
    Adam,
}

#[derive(Clone, Debug)]
enum States {
    Sgd(Vec<Vec<f64>>),
    Adam(Vec<AdamState>),
}

/// Optimizer state for every tensor of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    states: States,
    momentum: f64,
    adam: AdamHyper,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamSet, momentum: f64, adam: AdamHyper) -> Self {
        let lens = params.iter().map(|p| p.value.len());
        let states = match kind {
            OptimizerKind::SgdMomentum => States::Sgd(lens.map(|n| vec![0.0; n]).collect()),
            OptimizerKind::Adam => States::Adam(lens.map(AdamState::new).collect()),
        };
        Self { states, momentum, adam }
    }

    /// Applies one update; `grads` follow `params` order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim("optimizer step", &[params.len()], &[grads.len()]));
        }
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (p, g) = (p.value.data_mut(), g.data());
            match &mut self.states {
                States::Sgd(vel) => sgd_momentum_step(p, g, &mut vel[k], lr, self.momentum)?,
                States::Adam(st) => adam_step(p, g, &mut st[k], lr, self.adam)?,
            }
        }
        Ok(())
    }
}
