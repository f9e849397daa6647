//! Named parameters plus Adam optimizer state.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Gradient tensors keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, grad: Tensor) {
        self.entries.push((name.into(), grad));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Accumulates `other` into `self`; both must list the same parameters in the same order.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.entries.is_empty() {
            self.entries = other.entries.clone();
            return Ok(());
        }
        if self.entries.len() != other.entries.len() {
            return Err(Error::Invalid("gradient sets differ in length".into()));
        }
        for ((na, a), (nb, b)) in self.entries.iter_mut().zip(&other.entries) {
            if na != nb {
                return Err(Error::Invalid(format!(
                    "gradient order mismatch: {na} vs {nb}"
                )));
            }
            a.add_scaled(b, 1.0)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in &mut self.entries {
            t.scale(s);
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Ordered, uniquely named parameter tensors with per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
    pub adam: AdamConfig,
}

impl ParameterStore {
    pub fn new(adam: AdamConfig) -> Self {
        ParameterStore {
            names: Vec::new(),
            values: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
            adam,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let n = value.len();
        self.names.push(name);
        self.values.push(value);
        self.first_moment.push(vec![0.0; n]);
        self.second_moment.push(vec![0.0; n]);
        Ok(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.values[idx]
    }

    /// Direct mutable access, for tests and ablation surgery. Shapes must not change.
    pub fn value_mut(&mut self, idx: usize) -> &mut [f64] {
        self.values[idx].data_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, idx: usize) -> (&[f64], &[f64]) {
        (&self.first_moment[idx], &self.second_moment[idx])
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub(crate) fn restore_state(
        &mut self,
        idx: usize,
        value: Vec<f64>,
        m: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<()> {
        let n = self.values[idx].len();
        if value.len() != n || m.len() != n || v.len() != n {
            return Err(Error::shape(
                "parameter restore",
                self.values[idx].shape(),
                &[value.len()],
            ));
        }
        self.values[idx].data_mut().copy_from_slice(&value);
        self.first_moment[idx] = m;
        self.second_moment[idx] = v;
        Ok(())
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// One Adam step descending along `grads`.
    pub fn update_parameters(&mut self, grads: &Gradients) -> Result<()> {
        let lookup: HashMap<&str, &Tensor> = grads.iter().collect();
        let missing: Vec<String> = self
            .names
            .iter()
            .filter(|n| !lookup.contains_key(n.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingGradient(missing));
        }
        for (name, value) in self.names.iter().zip(&self.values) {
            let g = lookup[name.as_str()];
            if g.shape() != value.shape() {
                return Err(Error::shape("parameter gradient", value.shape(), g.shape()));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.adam;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (idx, name) in self.names.iter().enumerate() {
            let g = lookup[name.as_str()].data();
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for (((p, gi), mi), vi) in self.values[idx]
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
