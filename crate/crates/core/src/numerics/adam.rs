//! Adam with bias correction, decoupled-style weight decay, and the cosine
//! learning-rate schedule.

use crate::error::{Error, Result};
use crate::numerics::tensor::{Element, Tensor};

/// Per-parameter-list optimizer state. Moment buffers are aligned with the
/// parameter slice passed to [`adam_step`].
#[derive(Debug, Clone)]
pub struct AdamState<T: Element> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    /// Completed steps; increments by exactly one per [`adam_step`].
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl<T: Element> AdamState<T> {
    /// Default betas (0.9, 0.999) and epsilon 1e-8.
    pub fn new(params: &[Tensor<T>], lr: f64, weight_decay: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::Domain(format!("adam: lr {lr} must be positive")));
        }
        if weight_decay < 0.0 {
            return Err(Error::Domain(format!(
                "adam: weight decay {weight_decay} must be nonnegative"
            )));
        }
        Ok(AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr,
            weight_decay,
        })
    }
}

/// One Adam update over `params`, reading each tensor's accumulated gradient
/// (absent gradients count as zero). Weight decay is applied as an additive
/// `lr·wd·param` term alongside the moment update.
pub fn adam_step<T: Element>(params: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params but state built for {}",
            params.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let b1 = T::of(state.beta1);
    let b2 = T::of(state.beta2);
    let one = T::one();
    let eps = T::of(state.epsilon);
    let lr = T::of(state.lr);
    let wd = T::of(state.weight_decay);
    let corr1 = T::of(1.0 - state.beta1.powi(state.t as i32));
    let corr2 = T::of(1.0 - state.beta2.powi(state.t as i32));

    for (idx, p) in params.iter().enumerate() {
        let grad = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
        if grad.len() != p.numel() {
            return Err(Error::Dimension(format!(
                "adam_step: grad length {} does not match param {}",
                grad.len(),
                p.numel()
            )));
        }
        if T::VERIFY_FINITE {
            for (i, g) in grad.iter().enumerate() {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "adam_step: non-finite gradient {g} at param {idx} index {i}"
                    )));
                }
            }
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        p.update_data(|data| {
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * data[i];
            }
        });
    }
    Ok(())
}

/// `lr_max · 0.5 · (1 + cos(π · step/total_steps))`, no warmup.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64) -> Result<f64> {
    if total_steps < 1 {
        return Err(Error::Contract("cosine_lr: total_steps must be >= 1".to_string()));
    }
    if step > total_steps {
        return Err(Error::Contract(format!(
            "cosine_lr: step {step} exceeds total_steps {total_steps}"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_max * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}
