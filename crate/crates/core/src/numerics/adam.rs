use std::collections::BTreeMap;

use super::store::ParamStore;
use super::{NumericsError, Result, Tensor};

/// Adam hyperparameters. Defaults follow the pretraining optimizer settings:
/// lr 1e-4, betas (0.9, 0.99), eps 1e-6.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-6,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update.
///
/// Only trainable parameters that received a gradient are touched; the step
/// counter increments exactly once per call. Moment buffers are allocated
/// lazily on a parameter's first gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<()> {
    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);

    for (name, grad) in grads {
        if !params.is_trainable(name) {
            continue;
        }
        let current = params
            .get(name)
            .ok_or_else(|| NumericsError::ShapeMismatch(format!("gradient for unknown parameter {name}")))?;
        if current.shape() != grad.shape() {
            return Err(NumericsError::ShapeMismatch(format!(
                "adam_step: parameter {name} has shape {:?} but gradient {:?}",
                current.shape(),
                grad.shape()
            )));
        }
        grad.ensure_finite(&format!("gradient of {name}"))?;

        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));

        let mut updated = current.clone();
        let (md, vd, gd, pd) = (
            m.data_mut(),
            v.data_mut(),
            grad.data(),
            updated.data_mut(),
        );
        for i in 0..gd.len() {
            md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * gd[i];
            vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
        updated.ensure_finite(&format!("updated parameter {name}"))?;
        params.set_data(name, updated);
    }
    Ok(())
}
