//! Adam-family optimiser and cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Decoupled weight decay.
    Adamw,
    /// Weight decay folded into the gradient as an L2 term.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { kind: OptimizerKind::Adamw, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar = f32> {
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimizerState { t: 0, m: zeros(), v: zeros() }
    }
}

/// One update of every parameter. Nothing is modified when any gradient is
/// non-finite or shapes disagree.
///
/// AdamW: `p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
/// Adam: the gradient is `g + wd p` and there is no separate decay.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    let ids: Vec<_> = params.ids().collect();
    for (&id, g) in ids.iter().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::shape("adamw_step", format!("gradient {:?} for parameter {}", g.shape(), params.name(id))));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = match cfg.kind {
        OptimizerKind::Adamw => 1.0 - lr * cfg.weight_decay,
        OptimizerKind::Adam => 1.0,
    };
    for (k, (&id, g)) in ids.iter().zip(grads).enumerate() {
        let p = params.get_mut(id).data_mut();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for i in 0..p.len() {
            let pi = p[i].as_f64();
            let mut gi = g.data()[i].as_f64();
            if cfg.kind == OptimizerKind::Adam {
                gi += cfg.weight_decay * pi;
            }
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
            m[i] = T::of(mi);
            v[i] = T::of(vi);
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            p[i] = T::of(pi * decay - step);
        }
    }
    Ok(())
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2`
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("cosine schedule needs total_steps > 0".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond total_steps {total_steps}")));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}
