//! Named parameter collections.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Trainable parameters keyed by name. Iteration order is the sorted name
/// order, which keeps every downstream consumer deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Array2<f64>>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new(), step_count: 0 }
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::KeyMismatch(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_step_count(&mut self, n: u64) {
        self.step_count = n;
    }

    pub fn bump_step_count(&mut self) {
        self.step_count += 1;
    }

    /// Checks that `other` has exactly the same key set.
    pub fn check_same_keys<'a, I: Iterator<Item = &'a str>>(&self, other: I, what: &str) -> Result<()> {
        let mine: Vec<&str> = self.names().collect();
        let theirs: Vec<&str> = other.collect();
        if mine != theirs {
            return Err(Error::KeyMismatch(format!(
                "{what}: expected keys {mine:?}, got {theirs:?}"
            )));
        }
        Ok(())
    }

    pub fn raw(&self) -> &BTreeMap<String, Array2<f64>> {
        &self.params
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Gaussian-initialized matrix with the given standard deviation.
pub fn randn<R: Rng>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}
