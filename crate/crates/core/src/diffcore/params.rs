//! Named trainable tensors with Adam state.

use log::warn;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Matrix,
    grad: Option<Matrix>,
    m: Matrix,
    v: Matrix,
}

/// All trainable tensors of one model plus a single Adam optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
    adam: AdamConfig,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_adam(adam: AdamConfig) -> Self {
        Self {
            adam,
            ..Self::default()
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    /// Gradient from the last backward pass, zeros if none was recorded.
    pub fn grad(&self, id: ParamId) -> Matrix {
        let p = &self.params[id.0];
        p.grad.clone().unwrap_or_else(|| {
            let (r, c) = p.value.shape();
            Matrix::zeros(r, c)
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Matrix) -> Result<()> {
        let p = &mut self.params[id.0];
        if delta.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                delta.shape(),
                p.name,
                p.value.shape()
            )));
        }
        match &mut p.grad {
            Some(g) => g.add_assign(delta),
            None => p.grad = Some(delta.clone()),
        }
        Ok(())
    }

    /// One Adam update with bias correction; clears the gradients.
    ///
    /// A parameter without a recorded gradient is updated as if its gradient
    /// were zero, which still decays its moment estimates.
    pub fn adam_step(&mut self, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in &mut self.params {
            if p.grad.is_none() {
                warn!("no gradient recorded for parameter {}", p.name);
            }
            let grad = p.grad.take();
            let n = p.value.as_slice().len();
            for i in 0..n {
                let g = grad.as_ref().map_or(0.0, |g| g.as_slice()[i]);
                let m = beta1 * p.m.as_slice()[i] + (1.0 - beta1) * g;
                let v = beta2 * p.v.as_slice()[i] + (1.0 - beta2) * g * g;
                p.m.as_mut_slice()[i] = m;
                p.v.as_mut_slice()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value.as_mut_slice()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Flat copy of every parameter value, in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.as_slice().iter().copied())
            .collect()
    }
}
