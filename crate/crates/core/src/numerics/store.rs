use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

#[derive(Debug, Clone)]
struct Param {
    tensor: Tensor,
    trainable: bool,
}

/// Ordered collection of named parameter tensors.
///
/// Names are unique and shapes are immutable after creation; iteration order
/// is the sorted name order, which keeps checkpoints and updates
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        let prev = self.entries.insert(
            name.to_string(),
            Param {
                tensor,
                trainable: true,
            },
        );
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
    }

    pub fn insert_normal(&mut self, name: &str, shape: Vec<usize>, std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, std).expect("valid normal std");
        let len = shape.iter().product();
        let data = (0..len).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::new(shape, data));
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn insert_full(&mut self, name: &str, shape: Vec<usize>, value: f64) {
        let len = shape.iter().product();
        self.insert(name, Tensor::new(shape, vec![value; len]));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.tensor)
    }

    pub fn expect(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    /// Replace a tensor's payload; the shape must match the original.
    pub fn set_data(&mut self, name: &str, tensor: Tensor) {
        let param = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        assert_eq!(
            param.tensor.shape(),
            tensor.shape(),
            "shape of {name:?} is immutable"
        );
        param.tensor = tensor;
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).map(|p| p.trainable).unwrap_or(false)
    }

    /// Mark every parameter whose name starts with `prefix` (non-)trainable.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, param) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                param.trainable = trainable;
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), &p.tensor))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|p| p.tensor.len()).sum()
    }

    /// Bit-exact equality of a named subset (prefix match).
    pub fn bitwise_eq_prefix(&self, other: &ParamStore, prefix: &str) -> bool {
        let mine: Vec<_> = self.names().filter(|n| n.starts_with(prefix)).collect();
        let theirs: Vec<_> = other.names().filter(|n| n.starts_with(prefix)).collect();
        if mine != theirs {
            return false;
        }
        mine.iter().all(|name| {
            let a = self.expect(name);
            let b = other.expect(name);
            a.shape() == b.shape()
                && a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }

    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.bitwise_eq_prefix(other, "")
    }
}
