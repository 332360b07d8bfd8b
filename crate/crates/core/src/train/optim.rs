//! Adam with step-decayed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Param;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every_steps: u64,
}

/// `lr0 · decay_factor^floor(step / decay_every_steps)`.
pub fn lr_schedule(step: u64, s: &Schedule) -> f64 {
    s.lr0 * s.decay_factor.powi((step / s.decay_every_steps.max(1)) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Param<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.shape().numel()]).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient
/// is non-finite; the error names the first offending parameter.
pub fn adam_step<T: Real>(params: &mut [Param<T>], grads: &[Tensor<T>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::invalid(
            "adam_step",
            format!("{} parameters, {} gradients, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.value.shape(),
                right: g.shape(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(state.beta1), T::from_f64(state.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let step_size = T::from_f64(lr / (1.0 - state.beta1.powi(t)));
    let corr2 = T::from_f64(1.0 / (1.0 - state.beta2.powi(t)));
    let eps = T::from_f64(state.eps);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            *w = *w - step_size * *m / ((*v * corr2).sqrt() + eps);
        }
    }
    Ok(())
}
