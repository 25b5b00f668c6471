//! Named parameter store and the Adam optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered map of parameter name -> trainable tensor. Iteration order is the
/// insertion order, so optimizer state and checkpoints line up
/// deterministically.
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    tensors: Vec<Tensor>,
    pub rng_seed: u64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            index: HashMap::new(),
            tensors: Vec::new(),
            rng_seed,
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::State(format!("duplicate parameter name '{name}'")));
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Reset every gradient to an all-zero buffer, so parameters a
    /// particular forward pass never touches still step cleanly.
    pub fn zero_grads(&self) {
        for t in &self.tensors {
            t.zero_grad();
            t.accumulate_grad(&vec![0.0; t.numel()]);
        }
    }
}

/// Adam with bias correction; weight decay enters as an L2 term added to the
/// gradient.
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One optimizer step over every parameter in the store. All gradients
    /// must have been populated by a backward pass.
    pub fn step(&mut self, store: &ParamStore) -> Result<()> {
        if self.m.is_empty() {
            for (_, p) in store.iter() {
                self.m.push(vec![0.0; p.numel()]);
                self.v.push(vec![0.0; p.numel()]);
            }
        }
        if self.m.len() != store.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, p)) in store.iter().enumerate() {
            let grad = p
                .grad_vec()
                .ok_or_else(|| Error::State(format!("parameter '{name}' has no gradient")))?;
            if grad.len() != self.m[i].len() {
                return Err(Error::State(format!(
                    "moment buffer for '{name}' has wrong length"
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad[j] + self.weight_decay * data[j];
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            });
        }
        Ok(())
    }
}
