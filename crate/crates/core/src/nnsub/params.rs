use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// One named parameter with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) grad: Tensor<T>,
    pub(crate) m: Tensor<T>,
    pub(crate) v: Tensor<T>,
    pub(crate) step: u64,
    /// Buffers such as batch-norm running statistics are stored alongside
    /// the weights but never receive gradients or optimizer updates.
    pub(crate) trainable: bool,
}

impl<T: Scalar> ParamEntry<T> {
    fn new(value: Tensor<T>, trainable: bool) -> Self {
        let zeros = Tensor::zeros(value.shape());
        ParamEntry {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value: Arc::new(value),
            step: 0,
            trainable,
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Named collection of tensors, kept in key order so iteration, checksums
/// and checkpoints are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar = f32> {
    entries: BTreeMap<String, ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: &str, value: Tensor<T>, trainable: bool) {
        self.entries
            .insert(key.to_string(), ParamEntry::new(value, trainable));
    }

    /// Inserts a trainable tensor drawn uniformly from `±sqrt(1 / fan_in)`.
    pub fn init_uniform(&mut self, key: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        let bound = (1.0 / fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)));
        self.insert(key, t, true);
    }

    pub fn entry(&self, key: &str) -> Result<&ParamEntry<T>> {
        self.entries
            .get(key)
            .ok_or_else(|| Error::UnknownParam(key.to_string()))
    }

    fn entry_mut(&mut self, key: &str) -> Result<&mut ParamEntry<T>> {
        self.entries
            .get_mut(key)
            .ok_or_else(|| Error::UnknownParam(key.to_string()))
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<T>> {
        Ok(&self.entry(key)?.value)
    }

    pub(crate) fn get_arc(&self, key: &str) -> Result<Arc<Tensor<T>>> {
        Ok(Arc::clone(&self.entry(key)?.value))
    }

    pub fn set(&mut self, key: &str, value: Tensor<T>) -> Result<()> {
        let e = self.entry_mut(key)?;
        if e.value.shape() != value.shape() {
            return Err(Error::shape(
                "param set",
                format!("{key}: {:?} vs {:?}", e.value.shape(), value.shape()),
            ));
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub fn value_mut(&mut self, key: &str) -> Result<&mut Tensor<T>> {
        Ok(Arc::make_mut(&mut self.entry_mut(key)?.value))
    }

    pub fn grad(&self, key: &str) -> Result<&Tensor<T>> {
        Ok(&self.entry(key)?.grad)
    }

    pub fn accumulate_grad(&mut self, key: &str, g: &Tensor<T>) -> Result<()> {
        let e = self.entry_mut(key)?;
        if !e.trainable {
            return Ok(());
        }
        if e.grad.len() != g.len() {
            return Err(Error::shape("accumulate_grad", key.to_string()));
        }
        e.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(T::zero());
        }
    }

    pub fn scale_grads(&mut self, s: T) {
        for e in self.entries.values_mut() {
            e.grad.scale(s);
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn insert_entry(&mut self, key: String, entry: ParamEntry<T>) {
        self.entries.insert(key, entry);
    }

    /// Moves every entry of `other` into `self`; keys must be disjoint.
    pub fn merge(&mut self, other: ParamStore<T>) -> Result<()> {
        for (k, e) in other.entries {
            if self.entries.contains_key(&k) {
                return Err(Error::Config(format!("duplicate parameter {k}")));
            }
            self.entries.insert(k, e);
        }
        Ok(())
    }

    /// Copies of the entries whose key starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, e)| (k.clone(), e.clone()))
                .collect(),
        }
    }

    /// Ok when both stores hold the same keys with the same shapes.
    pub fn check_layout(&self, reference: &ParamStore<T>) -> Result<()> {
        let a: Vec<_> = self.entries.iter().map(|(k, e)| (k, e.value.shape())).collect();
        let b: Vec<_> = reference.entries.iter().map(|(k, e)| (k, e.value.shape())).collect();
        if a != b {
            let missing: Vec<&str> = reference
                .keys()
                .filter(|k| self.entries.get(*k).map(|e| e.value.shape()) != reference.entries.get(*k).map(|e| e.value.shape()))
                .collect();
            return Err(Error::Config(format!("parameter layout mismatch (e.g. {missing:?})")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_weights(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Same parameters in another precision; optimizer state is carried over.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            value: Arc::new(e.value.cast()),
                            grad: e.grad.cast(),
                            m: e.m.cast(),
                            v: e.v.cast(),
                            step: e.step,
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// SHA-256 over keys, shapes and the `f32` bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (k, e) in &self.entries {
            h.update(k.as_bytes());
            for d in e.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                h.update((v.f64() as f32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
