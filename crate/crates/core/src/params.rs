//! Named parameter storage.
//!
//! Parameters are registered once, in a fixed order, so initialization and
//! checkpoint layout are deterministic. Tapes reference parameters by index.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct ParamStore<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, tensor: Tensor<T>) -> usize {
        assert!(
            !self.index.contains_key(name),
            "parameter {name} registered twice"
        );
        self.entries.push((name.to_string(), tensor));
        let idx = self.entries.len() - 1;
        self.index.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<T> {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.entries[idx].1
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replace the value of a named parameter, keeping its shape.
    pub fn load(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let idx = self
            .lookup(name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        if self.entries[idx].1.shape != tensor.shape {
            return Err(Error::Format(format!(
                "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                tensor.shape, self.entries[idx].1.shape
            )));
        }
        self.entries[idx].1 = tensor;
        Ok(())
    }

    pub fn map_values<U: Real>(&self, f: impl Fn(&Tensor<T>) -> Tensor<U>) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, t) in &self.entries {
            out.register(name, f(t));
        }
        out
    }

    pub fn to_f64(&self) -> ParamStore<f64> {
        self.map_values(|t| t.to_f64())
    }
}
