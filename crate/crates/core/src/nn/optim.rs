use crate::error::{NewtError, Result};
use crate::nn::store::ParamStore;
use crate::scalar::{c, Scalar};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub clip_norm: S,
}

impl<S: Scalar> Default for AdamConfig<S> {
    fn default() -> Self {
        AdamConfig {
            lr: c(3e-4),
            beta1: c(0.9),
            beta2: c(0.999),
            eps: c(1e-8),
            clip_norm: c(20.0),
        }
    }
}

/// One Adam step over every entry in the store: rescales gradients so the
/// global L2 norm is at most `clip_norm`, applies bias-corrected Adam,
/// bumps `step_count`, and zeroes the gradient buffers.
///
/// Entries with an `lr_override` use it in place of `cfg.lr`.
pub fn adam_step<S: Scalar>(store: &mut ParamStore<S>, cfg: &AdamConfig<S>) -> Result<()> {
    for (name, e) in store.iter() {
        if !e.grad.all_finite() {
            return Err(NewtError::NonFinite(format!("gradient of '{name}'")));
        }
    }
    let norm = store.grad_norm();
    let scale = if norm > cfg.clip_norm {
        cfg.clip_norm / norm
    } else {
        S::ONE
    };
    let t = store.step_count + 1;
    let bc1 = S::ONE - cfg.beta1.powi(t as i32);
    let bc2 = S::ONE - cfg.beta2.powi(t as i32);
    for (_, e) in store.iter_mut() {
        let lr = e.lr_override.unwrap_or(cfg.lr);
        let step = lr / bc1;
        for i in 0..e.values.data().len() {
            let g = e.grad.data()[i] * scale;
            let m = cfg.beta1 * e.adam_m.data()[i] + (S::ONE - cfg.beta1) * g;
            let v = cfg.beta2 * e.adam_v.data()[i] + (S::ONE - cfg.beta2) * g * g;
            e.adam_m.data_mut()[i] = m;
            e.adam_v.data_mut()[i] = v;
            let denom = (v / bc2).sqrt() + cfg.eps;
            e.values.data_mut()[i] -= step * m / denom;
        }
        e.grad.fill(S::ZERO);
    }
    store.step_count = t;
    Ok(())
}

/// target <- momentum * target + (1 - momentum) * online, elementwise.
/// Every target entry must exist in `online` with a matching shape; the
/// target may track a subset of the online store (the Q ensemble).
pub fn ema_update<S: Scalar>(
    target: &mut ParamStore<S>,
    online: &ParamStore<S>,
    momentum: S,
) -> Result<()> {
    let one_minus = S::ONE - momentum;
    for (name, t) in target.iter_mut() {
        let o = online.get(name)?;
        if !t.values.same_shape(&o.values) {
            return Err(NewtError::dim(format!("ema: shape mismatch for '{name}'")));
        }
        for (tv, &ov) in t.values.data_mut().iter_mut().zip(o.values.data()) {
            *tv = momentum * *tv + one_minus * ov;
        }
    }
    Ok(())
}
