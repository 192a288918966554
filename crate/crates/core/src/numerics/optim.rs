use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-4;
pub const LR_DECAY_FACTOR: f64 = 5.0;
pub const LR_DECAY_EVERY: usize = 10;

/// Step learning-rate schedule: the base rate divided by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: DEFAULT_LR,
            factor: LR_DECAY_FACTOR,
            every: LR_DECAY_EVERY,
        }
    }
}

impl LrSchedule {
    pub fn at_epoch(&self, epoch: usize) -> f64 {
        let k = (epoch / self.every.max(1)) as i32;
        self.base / self.factor.powi(k)
    }
}

/// Moment buffers and step counter for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let first = params.iter().map(|(_, p)| vec![T::zero(); p.tensor.numel()]).collect();
        let second = params.iter().map(|(_, p)| vec![T::zero(); p.tensor.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradient slots of `params`.
///
/// Frozen parameters (no gradient slot) are skipped.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::shape("adam_step", &[state.first.len()], &[params.len()]));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr = T::lit(state.lr);
    let eps = T::lit(state.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let numel = p.tensor.numel();
        let Some(grad) = p.tensor.grad().map(<[T]>::to_vec) else {
            continue;
        };
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        if m.len() != numel || grad.len() != numel {
            return Err(Error::shape("adam_step", &[m.len()], &[grad.len()]));
        }
        let data = p.tensor.data_mut();
        for k in 0..numel {
            let g = grad[k];
            m[k] = b1 * m[k] + (T::one() - b1) * g;
            v[k] = b2 * v[k] + (T::one() - b2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
