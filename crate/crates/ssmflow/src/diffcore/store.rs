//! Named parameter storage with gradient slots.

use indexmap::IndexMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Exponential-moving-average momentum for normalisation statistics.
pub const STAT_EMA_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone)]
struct Entry {
    value: Tensor,
    grad: Tensor,
    learnable: bool,
}

/// Named learnable arrays plus non-learnable running statistics.
///
/// Every learnable array owns a gradient slot of identical shape.
/// Iteration order is insertion order, which keeps optimiser updates,
/// checkpoints and gradient reductions deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: IndexMap<String, Entry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_learnable(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, value, true)
    }

    /// Insert a non-learnable entry (normalisation running statistics).
    pub fn insert_stat(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, value, false)
    }

    fn insert(&mut self, name: &str, value: Tensor, learnable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(
            name.to_string(),
            Entry {
                value,
                grad,
                learnable,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across learnable entries.
    pub fn n_learnable_values(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.learnable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn name_at(&self, idx: usize) -> &str {
        self.entries.get_index(idx).map(|(k, _)| k.as_str()).unwrap()
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn value_at(&self, idx: usize) -> &Tensor {
        &self.entries[idx].value
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn is_learnable_at(&self, idx: usize) -> bool {
        self.entries[idx].learnable
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn learnable_indices(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].learnable)
            .collect()
    }

    /// Reset every gradient slot to zero.
    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Accumulate a gradient map (as produced by `Tape::gradient`) into the
    /// gradient slots.
    pub fn accumulate_grads(&mut self, grads: &GradMap) {
        debug_assert_eq!(grads.per_entry.len(), self.entries.len());
        for (i, g) in grads.per_entry.iter().enumerate() {
            let e = &mut self.entries[i];
            if e.learnable {
                for (slot, v) in e.grad.data_mut().iter_mut().zip(g.data()) {
                    *slot += v;
                }
            }
        }
    }

    /// EMA update of a non-learnable statistics entry.
    pub fn ema_update_stat(&mut self, name: &str, batch: &[f64]) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown statistic '{name}'")))?;
        if e.learnable {
            return Err(Error::Config(format!(
                "'{name}' is learnable, not a running statistic"
            )));
        }
        if e.value.len() != batch.len() {
            return Err(Error::Shape(format!(
                "statistic '{name}' has {} values, update has {}",
                e.value.len(),
                batch.len()
            )));
        }
        for (s, b) in e.value.data_mut().iter_mut().zip(batch) {
            *s = STAT_EMA_MOMENTUM * *s + (1.0 - STAT_EMA_MOMENTUM) * b;
        }
        Ok(())
    }

    /// Overwrite values from another store (same entry names and shapes).
    pub fn load_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        for (name, entry) in &other.entries {
            let e = self.entries.get_mut(name).ok_or_else(|| {
                Error::Config(format!("checkpoint has unknown parameter '{name}'"))
            })?;
            if e.value.shape() != entry.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter '{name}': shape {:?} vs checkpoint {:?}",
                    e.value.shape(),
                    entry.value.shape()
                )));
            }
            e.value = entry.value.clone();
        }
        Ok(())
    }

    /// Iterate `(name, value, learnable)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.entries
            .iter()
            .map(|(k, e)| (k.as_str(), &e.value, e.learnable))
    }
}

/// Per-entry gradients aligned with a store's entry order.
#[derive(Debug, Clone)]
pub struct GradMap {
    per_entry: Vec<Tensor>,
}

impl GradMap {
    /// Zero gradients shaped after the store.
    pub fn zeros_like(store: &ParameterStore) -> Self {
        GradMap {
            per_entry: store
                .entries
                .values()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
        }
    }

    pub fn entry(&self, idx: usize) -> &Tensor {
        &self.per_entry[idx]
    }

    pub fn by_name<'a>(&'a self, store: &ParameterStore, name: &str) -> Option<&'a Tensor> {
        store.index_of(name).map(|i| &self.per_entry[i])
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.per_entry[idx]
    }

    /// Sum of |g| over learnable entries.
    pub fn global_l1(&self, store: &ParameterStore) -> f64 {
        self.per_entry
            .iter()
            .enumerate()
            .filter(|(i, _)| store.is_learnable_at(*i))
            .map(|(_, t)| t.data().iter().map(|g| g.abs()).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.per_entry {
            t.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn add(&mut self, other: &GradMap) {
        debug_assert_eq!(self.per_entry.len(), other.per_entry.len());
        for (a, b) in self.per_entry.iter_mut().zip(&other.per_entry) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.per_entry.iter().all(|t| t.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_slots_match_shapes() {
        let mut store = ParameterStore::new();
        store
            .insert_learnable("w", Tensor::matrix(2, 3, vec![0.0; 6]).unwrap())
            .unwrap();
        assert_eq!(store.grad("w").unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new();
        store.insert_learnable("w", Tensor::scalar(1.0)).unwrap();
        assert!(store.insert_learnable("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn stats_are_not_learnable() {
        let mut store = ParameterStore::new();
        store
            .insert_stat("bn/mean", Tensor::vector(vec![0.0, 0.0]))
            .unwrap();
        let idx = store.index_of("bn/mean").unwrap();
        assert!(!store.is_learnable_at(idx));
        store.ema_update_stat("bn/mean", &[1.0, 2.0]).unwrap();
        let v = store.value("bn/mean").unwrap().data().to_vec();
        assert!((v[0] - 0.01).abs() < 1e-15);
        assert!((v[1] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn ema_update_refuses_learnables() {
        let mut store = ParameterStore::new();
        store.insert_learnable("w", Tensor::scalar(1.0)).unwrap();
        assert!(store.ema_update_stat("w", &[0.0]).is_err());
    }
}
