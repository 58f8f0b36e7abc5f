use std::collections::BTreeMap;

use super::Tensor2;
use crate::error::{FocusError, Result};

/// Named parameter tensors. Iteration order is sorted by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor2>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor2) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(FocusError::DuplicateParameter { name });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.tensors
            .get(name)
            .ok_or_else(|| FocusError::UnknownParameter {
                name: name.to_string(),
            })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| FocusError::UnknownParameter {
                name: name.to_string(),
            })
    }

    /// Adds `delta` to the gradient of `name`. Frozen tensors ignore it.
    pub fn accumulate(&mut self, name: &str, delta: &Tensor2) -> Result<()> {
        let t = self.get_mut(name)?;
        if t.requires_grad {
            t.accumulate_grad(delta)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor2::zero_grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor2)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.tensors
            .values()
            .filter(|t| t.requires_grad)
            .map(Tensor2::len)
            .sum()
    }
}
