//! AdamW: Adam with decoupled weight decay.

use std::collections::BTreeMap;

use super::{Gradients, ParamStore};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One AdamW update of every parameter in `params`.
///
/// `θ ← θ − lr·(m̂ / (√v̂ + eps) + wd·θ)`, with the decay term using the
/// pre-step value of `θ`.
pub fn adamw_step(params: &mut ParamStore, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    for (name, g) in grads {
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("gradient of `{name}`"),
                format!("non-finite value at index {i}"),
            ));
        }
    }
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        if !grads.contains_key(name) {
            return Err(Error::shape(format!("no gradient supplied for `{name}`")));
        }
    }

    state.step += 1;
    let AdamWConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for name in names {
        let theta = params.get(&name)?;
        let g = &grads[&name];
        if g.shape() != theta.shape() {
            return Err(Error::shape(format!(
                "gradient of `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                theta.shape()
            )));
        }
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
        let mut next = theta.to_vec();
        for i in 0..next.len() {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            next[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * next[i]);
        }
        params.set(&name, Tensor::raw(theta.shape().to_vec(), next))?;
    }
    Ok(())
}
