use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameters plus the set of names currently receiving updates.
///
/// Entries are kept in name order so serialisation and hashing are stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
    trainable: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::contract(format!("parameter `{name}` already exists")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Overwrites the payload of an existing entry, keeping its shape.
    pub fn assign(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no parameter `{name}`")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::Dimension {
                op: "assign",
                lhs: slot.shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.trainable.remove(name);
        self.entries.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.as_str())
    }

    /// Total number of scalar values across entries matching `filter`.
    pub fn count_values(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.iter().filter(|(k, _)| filter(k)).map(|(_, t)| t.numel()).sum()
    }

    pub fn trainable(&self) -> &BTreeSet<String> {
        &self.trainable
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    pub fn freeze_all(&mut self) {
        self.trainable.clear();
    }

    /// Replaces the trainable mask with every entry accepted by `select`.
    pub fn set_trainable_where(&mut self, select: impl Fn(&str) -> bool) {
        self.trainable = self.entries.keys().filter(|k| select(k)).cloned().collect();
    }

    pub fn set_trainable(&mut self, names: impl IntoIterator<Item = String>) -> Result<()> {
        let mut mask = BTreeSet::new();
        for n in names {
            if !self.entries.contains_key(&n) {
                return Err(Error::contract(format!("cannot train unknown parameter `{n}`")));
            }
            mask.insert(n);
        }
        self.trainable = mask;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.entries.values_mut().for_each(Tensor::zero_grad);
    }

    /// Adds every parameter gradient in `grads` into the matching entry.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.params() {
            let t = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter `{name}`")))?;
            t.accumulate_grad(g);
        }
        Ok(())
    }

    /// SHA-256 over name, shape and little-endian payload of one entry.
    pub fn entry_hash(&self, name: &str) -> Option<String> {
        self.get(name).map(|t| hash_entry(name, t))
    }

    /// Hashes of every entry accepted by `filter`.
    pub fn hashes_where(&self, filter: impl Fn(&str) -> bool) -> BTreeMap<String, String> {
        self.iter()
            .filter(|(k, _)| filter(k))
            .map(|(k, t)| (k.to_string(), hash_entry(k, t)))
            .collect()
    }

    /// Hashes of every entry outside the trainable mask.
    pub fn frozen_hashes(&self) -> BTreeMap<String, String> {
        self.hashes_where(|k| !self.trainable.contains(k))
    }

    /// Copies the entries under `prefix` into a new store with the prefix removed.
    pub fn extract_prefix(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for name in self.names_with_prefix(prefix) {
            let mut t = self.entries[name].clone();
            t.zero_grad();
            out.entries.insert(name[prefix.len()..].to_string(), t);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in self.iter() {
            t.validate()
                .map_err(|e| Error::Invariant(format!("parameter `{name}`: {e}")))?;
        }
        if let Some(n) = self.trainable.iter().find(|n| !self.entries.contains_key(*n)) {
            return Err(Error::Invariant(format!("trainable mask names missing `{n}`")));
        }
        Ok(())
    }
}

pub fn hash_entry(name: &str, t: &Tensor) -> String {
    let mut h = Sha256::new();
    h.update((name.len() as u32).to_le_bytes());
    h.update(name.as_bytes());
    for d in t.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    h.update(t.to_le_bytes());
    hex::encode(h.finalize())
}
