use serde::{Deserialize, Serialize};

use super::network::{Gradient, RefinerParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Momentum buffer; `None` until the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    pub velocity: Option<Gradient>,
}

/// `v <- momentum * v + g; x <- x - lr * v` over flat slices.
pub fn momentum_update(values: &mut [f64], velocity: &mut [f64], grad: &[f64], cfg: &SgdConfig) {
    for ((x, v), g) in values.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = cfg.momentum * *v + g;
        *x -= cfg.lr * *v;
    }
}

/// One momentum-SGD step. On a non-finite result nothing is committed.
pub fn sgd_step(
    params: &mut RefinerParams,
    grad: &Gradient,
    cfg: &SgdConfig,
    state: &mut SgdState,
) -> Result<()> {
    cfg.validate()?;
    let mut velocity = state
        .velocity
        .clone()
        .unwrap_or_else(|| Gradient::zeros(params.dims()));
    let momentum = cfg.momentum;
    velocity.w1.zip_mut_with(&grad.w1, |v, &g| *v = momentum * *v + g);
    velocity.b1.zip_mut_with(&grad.b1, |v, &g| *v = momentum * *v + g);
    velocity.w2.zip_mut_with(&grad.w2, |v, &g| *v = momentum * *v + g);
    velocity.b2.zip_mut_with(&grad.b2, |v, &g| *v = momentum * *v + g);

    let mut next = params.clone();
    let lr = cfg.lr;
    next.zip_apply(&velocity, |p, v| *p -= lr * v);
    if !next.is_finite() {
        return Err(Error::NonFiniteUpdate);
    }
    *params = next;
    state.velocity = Some(velocity);
    Ok(())
}
