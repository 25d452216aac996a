//! Adam with bias correction and a per-epoch step decay schedule.

use crate::error::{shape_err, Result};
use crate::nn::Param;
use crate::real::Real;
use crate::tensor::{no_grad, Grads};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// One bias-corrected Adam update applied in place.
pub fn adam_update(param: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if param.len() != grad.len() {
        return shape_err("adam_update", format!("{} params vs {} grads", param.len(), grad.len()));
    }
    if state.m.len() != param.len() {
        state.m = vec![0.0; param.len()];
        state.v = vec![0.0; param.len()];
        state.t = 0;
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        param[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a fixed list of parameters.
pub struct Adam<T: Real> {
    pub cfg: AdamConfig,
    params: Vec<Param<T>>,
    states: Vec<AdamState>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: Vec<Param<T>>, cfg: AdamConfig) -> Self {
        let states = vec![AdamState::default(); params.len()];
        Adam { cfg, params, states }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Updates every parameter that has an entry in `grads`.
    pub fn step(&mut self, grads: &Grads<T>) -> Result<()> {
        no_grad(|| {
            for (p, st) in self.params.iter().zip(self.states.iter_mut()) {
                let value = p.get();
                let Some(g) = grads.get(&value) else { continue };
                let mut data = value.to_f64_vec();
                adam_update(&mut data, &g.to_f64_vec(), st, &self.cfg)?;
                p.set_f64(&data)?;
            }
            Ok(())
        })
    }
}

/// Learning rate `base * gamma^epoch`.
#[derive(Debug, Clone, Copy)]
pub struct StepDecay {
    pub base: f64,
    pub gamma: f64,
}

impl StepDecay {
    pub fn new(base: f64, gamma: f64) -> Self {
        StepDecay { base, gamma }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi(epoch as i32)
    }
}
