use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates for one parameter list. Moments are zero-initialised
/// lazily on the first step, from the parameter shapes seen then.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    if state.t == 0 && state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::shape("adam_step", &[state.m.len()], &[params.len()]));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.shape() != m.shape() {
            return Err(Error::shape("adam_step", m.shape(), p.shape()));
        }
    }

    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((pv, &gv), (mv, vv)) in iter {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
