//! Adam with decoupled weight decay.

use crate::{Error, Result, Tensor};

/// Optimizer state. Moment buffers are allocated lazily to match the
/// parameter list handed to the first [`adam_step`] call.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update with bias correction. Decoupled weight decay is applied as
/// `p <- p * (1 - lr * wd)` before the moment update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArg(format!(
            "adam_step: {} params but {} grads",
            params.len(),
            grads.len()
        )));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.elem_count()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.elem_count()]).collect();
    }
    if state.m.len() != params.len() {
        return Err(Error::InvalidArg(
            "adam_step: parameter list changed size".into(),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        let gd = g.data();
        for (i, pv) in p.data_mut().iter_mut().enumerate() {
            *pv *= decay;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gd[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gd[i] * gd[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *pv -= state.lr * mhat / (vhat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
