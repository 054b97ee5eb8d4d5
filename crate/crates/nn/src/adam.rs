//! Adam optimizer and the step learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Per-parameter first/second moments. Moments are held at `f64` so the
/// update arithmetic does not depend on the training precision.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update over every gradient entry.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    for (name, grad) in grads {
        let param = store.get_mut(name)?;
        if param.data.len() != grad.len() {
            return Err(Error::shape(format!(
                "gradient for {name} has {} values, parameter has {}",
                grad.len(),
                param.data.len()
            )));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for k in 0..grad.len() {
            let g = grad[k].as_f64();
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            let delta = lr * m_hat / (v_hat.sqrt() + state.eps);
            param.data[k] = T::from_f64(param.data[k].as_f64() - delta);
        }
    }
    Ok(())
}

/// Step schedule: `lr(epoch) = initial * decay^(epoch / period)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay: f64,
    pub period: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial_lr: 1e-5,
            decay: 0.7,
            period: 10,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: u32) -> f64 {
        self.initial_lr * self.decay.powi((epoch / self.period.max(1)) as i32)
    }
}
