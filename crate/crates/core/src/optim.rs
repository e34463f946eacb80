//! Named parameter sets with gradient accumulators, plus the two optimizers
//! the training stages use: momentum SGD for generators, Adam for
//! discriminators.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, PartialEq)]
enum OptState {
    /// Zero-initialized lazily on the first optimizer step.
    Empty,
    Sgd { velocity: Vec<f32> },
    Adam { m: Vec<f32>, v: Vec<f32> },
}

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Vec<f32>,
    state: OptState,
}

/// Ordered collection of named parameter tensors with per-parameter gradient
/// accumulators and optimizer state. Each set carries a unique id so a tape
/// can route gradients back to the right set.
#[derive(Debug)]
pub struct ParameterSet {
    id: u64,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    step: u64,
}

impl Clone for ParameterSet {
    /// Clones values, gradients and optimizer state under a fresh set id.
    fn clone(&self) -> Self {
        ParameterSet {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            entries: self.entries.clone(),
            index: self.index.clone(),
            step: self.step,
        }
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Usage(format!("duplicate parameter name {name:?}")));
        }
        let grad = vec![0.0; value.numel()];
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
            state: OptState::Empty,
        });
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.position(name).map(|i| &self.entries[i].value)
    }

    pub fn grad(&self, name: &str) -> Result<&[f32]> {
        self.position(name).map(|i| self.entries[i].grad.as_slice())
    }

    pub(crate) fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))
    }

    pub(crate) fn value_at(&self, idx: usize) -> &Tensor {
        &self.entries[idx].value
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, delta: &[f32]) {
        for (g, d) in self.entries[idx].grad.iter_mut().zip(delta) {
            *g += *d;
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Overwrites a parameter value in place, keeping grads/state shapes.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.position(name)?;
        if value.shape() != self.entries[i].value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {name:?} has shape {:?}, got {:?}",
                self.entries[i].value.shape(),
                value.shape()
            )));
        }
        self.entries[i].value = value;
        Ok(())
    }

    /// True when values (not grads or optimizer state) are bit-identical.
    pub fn values_equal(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}

/// Classic momentum SGD with L2 weight decay folded into the gradient before
/// the momentum update. Gradients are cleared afterward.
pub fn sgd_step(params: &mut ParameterSet, lr: f32, momentum: f32, weight_decay: f32) -> Result<()> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::Config(format!("sgd learning rate must be > 0, got {lr}")));
    }
    for e in &mut params.entries {
        if e.state == OptState::Empty {
            e.state = OptState::Sgd {
                velocity: vec![0.0; e.grad.len()],
            };
        }
        let OptState::Sgd { velocity } = &mut e.state else {
            return Err(Error::Usage(format!(
                "parameter {:?} already carries non-SGD optimizer state",
                e.name
            )));
        };
        let p = e.value.data_mut();
        for i in 0..p.len() {
            let g = e.grad[i] + weight_decay * p[i];
            velocity[i] = momentum * velocity[i] + g;
            p[i] -= lr * velocity[i];
        }
        e.grad.fill(0.0);
        e.value.check_finite(&format!("sgd update of {}", e.name))?;
    }
    params.step += 1;
    Ok(())
}

/// Bias-corrected Adam. Gradients are cleared afterward.
pub fn adam_step(
    params: &mut ParameterSet,
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
) -> Result<()> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Config(format!("adam eps must be > 0, got {eps}")));
    }
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::Config(format!("adam learning rate must be > 0, got {lr}")));
    }
    params.step += 1;
    let t = params.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for e in &mut params.entries {
        if e.state == OptState::Empty {
            e.state = OptState::Adam {
                m: vec![0.0; e.grad.len()],
                v: vec![0.0; e.grad.len()],
            };
        }
        let OptState::Adam { m, v } = &mut e.state else {
            return Err(Error::Usage(format!(
                "parameter {:?} already carries non-Adam optimizer state",
                e.name
            )));
        };
        let p = e.value.data_mut();
        for i in 0..p.len() {
            let g = e.grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        e.grad.fill(0.0);
        e.value.check_finite(&format!("adam update of {}", e.name))?;
    }
    Ok(())
}
