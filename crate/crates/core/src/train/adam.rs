//! Bias-corrected Adam.

use crate::field::FieldParams;
use crate::scalar::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: FieldParams<F>,
    pub v: FieldParams<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &FieldParams<F>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<F: Real>(params: &mut FieldParams<F>, grads: &FieldParams<F>, state: &mut AdamState<F>, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::of(BETA1), F::of(BETA2));
    let (one, eps) = (F::one(), F::of(EPSILON));
    let corr1 = F::of(1.0 - BETA1.powi(t));
    let corr2 = F::of(1.0 - BETA2.powi(t));
    let lr = F::of(lr);
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, (_, _, g)), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
