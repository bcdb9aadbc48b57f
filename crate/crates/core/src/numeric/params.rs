use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::array::NumArray;
use super::tape::Gradients;

/// Named learnable arrays, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, NumArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NumArray) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&NumArray> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NumArray> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NumArray)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut NumArray)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_size(&self) -> usize {
        self.entries.values().map(NumArray::len).sum()
    }

    /// Per-parameter L2 norms, used in divergence diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.l2_norm()))
            .collect()
    }

    /// Plain `param -= lr * grad`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (name, value) in self.entries.iter_mut() {
            if let Some(g) = grads.get(name) {
                for (p, d) in value.values_mut().iter_mut().zip(g.values()) {
                    *p -= lr * d;
                }
            }
        }
    }
}
