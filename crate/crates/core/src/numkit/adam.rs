use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{NetGrads, NetParams, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetParams<T>) -> Self {
        let n = params.len();
        Self {
            m: Tensor::zeros(vec![n]).expect("non-empty parameters"),
            v: Tensor::zeros(vec![n]).expect("non-empty parameters"),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place. Non-finite gradients are
/// rejected before anything is modified.
pub fn adam_step<T: Real>(
    params: &mut NetParams<T>,
    grads: &NetGrads<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::shape(format!(
            "adam: params {n}, grads {}, moments {}/{}",
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(Error::invalid("adam betas must lie in [0, 1)"));
    }
    for (name, range) in params.blocks() {
        if grads.data[range].iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { block: name });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::one() - T::of(cfg.beta1.powi(t));
    let bc2 = T::one() - T::of(cfg.beta2.powi(t));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in params
        .as_mut_slice()
        .iter_mut()
        .zip(&grads.data)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
