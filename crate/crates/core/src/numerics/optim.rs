use alloc::format;
use alloc::vec::Vec;

use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Hyper-parameters for one AdamW update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        OptimState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay. Decay multiplies each
/// parameter by `1 - lr·weight_decay` before the Adam delta is subtracted.
pub fn adamw_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    hp: &AdamWParams<T>,
) -> Result<()> {
    let (zero, one) = (T::zero(), T::one());
    if !(hp.beta1 >= zero && hp.beta1 < one && hp.beta2 >= zero && hp.beta2 < one) {
        return Err(Error::invalid("betas", "each beta must lie in [0, 1)"));
    }
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::shape(
            "adamw_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() || p.shape() != state.v[i].shape() {
            return Err(Error::shape("adamw_step", format!("parameter {i}: {:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = one - hp.beta1.powi(t);
    let bc2 = one - hp.beta2.powi(t);
    let decay = one - hp.lr * hp.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = hp.beta1 * m[j] + (one - hp.beta1) * gv;
            v[j] = hp.beta2 * v[j] + (one - hp.beta2) * gv * gv;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pv = *pv * decay - hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
        if !p.is_finite() {
            return Err(Error::NonFinite { op: "adamw_step" });
        }
    }
    Ok(())
}
