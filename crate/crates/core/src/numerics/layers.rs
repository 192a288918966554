use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BatchStats, ParamId, ParamKind, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Inverted dropout. Identity in eval mode or at rate 0.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask = (0..tape.value(x).numel())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    tape.apply_mask(x, mask)
}

/// Batch normalization over `[C × L]` inputs with learned scale/shift and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{prefix}.gamma"),
            ParamKind::NormScale,
            Tensor::full(&[channels], T::one()),
        );
        let beta = store.add(
            format!("{prefix}.beta"),
            ParamKind::NormShift,
            Tensor::zeros(&[channels]),
        );
        Self {
            gamma,
            beta,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    /// Train mode normalizes with batch statistics and returns them for
    /// [`BatchNorm1d::update_running`]; eval mode uses the running statistics.
    pub fn forward(&self, tape: &mut Tape<'_, T>, x: Var, mode: Mode) -> Result<(Var, Option<BatchStats<T>>)> {
        let (g, b) = (tape.param(self.gamma), tape.param(self.beta));
        let eps = T::lit(BN_EPS);
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batchnorm_train(x, g, b, eps)?;
                Ok((y, Some(stats)))
            }
            Mode::Eval => {
                let y = tape.batchnorm_eval(x, g, b, &self.running_mean, &self.running_var, eps)?;
                Ok((y, None))
            }
        }
    }

    /// Exponential moving average with momentum 0.1; the variance fed in is
    /// converted to its unbiased estimate when the batch has more than one frame.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::lit(BN_MOMENTUM);
        let n = stats.count;
        let correction = if n > 1 {
            T::from_usize_lossy(n) / T::from_usize_lossy(n - 1)
        } else {
            T::one()
        };
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] =
                (T::one() - m) * self.running_var[c] + m * stats.var[c] * correction;
        }
    }
}
