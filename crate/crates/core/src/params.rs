//! Named learnable tensors with gradient slots and Adam moments.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

impl<T: Real> ParamEntry<T> {
    fn new(value: Tensor<T>) -> Self {
        let shape = value.shape();
        ParamEntry {
            value,
            grad: Tensor::zeros(shape),
            adam_m: Tensor::zeros(shape),
            adam_v: Tensor::zeros(shape),
        }
    }
}

/// Insertion-ordered parameter collection.
///
/// `grads_ready` is set by a backward pass and cleared when the optimizer
/// consumes the gradients, so stepping on stale or absent gradients is
/// caught instead of silently applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, ParamEntry<T>>,
    step_count: u64,
    grads_ready: bool,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
            step_count: 0,
            grads_ready: false,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.entries.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step_count = step;
    }

    pub(crate) fn bump_step(&mut self) {
        self.step_count += 1;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    /// Add `grad` into the named entry's gradient slot.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        if entry.grad.shape() != grad.shape() {
            return Err(Error::config(format!(
                "gradient shape {} does not match parameter `{name}` {}",
                grad.shape(),
                entry.grad.shape()
            )));
        }
        entry.grad.add_assign(grad);
        self.grads_ready = true;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(T::zero());
        }
        self.grads_ready = false;
    }

    /// Set every value (not moments) to zero.
    pub fn zero_values(&mut self) {
        for e in self.entries.values_mut() {
            e.value.fill(T::zero());
        }
    }

    /// Name of the first entry holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, e)| !e.value.is_finite())
            .map(|(k, _)| k.as_str())
    }

    pub fn shapes(&self) -> Vec<(String, Shape)> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.shape()))
            .collect()
    }

    /// Convert every tensor (values, gradients and moments) to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            value: e.value.cast(),
                            grad: e.grad.cast(),
                            adam_m: e.adam_m.cast(),
                            adam_v: e.adam_v.cast(),
                        },
                    )
                })
                .collect(),
            step_count: self.step_count,
            grads_ready: self.grads_ready,
        }
    }
}
