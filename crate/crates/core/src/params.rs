use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::{Real, Tensor};

/// Index of a parameter inside a [`ParamStore`]. Only valid until the next
/// insertion or removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in insertion order. Names are the checkpoint contract:
/// adapters attach to weights by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            bail!(Config, "duplicate parameter name `{}`", name);
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry { name: name.to_string(), value, trainable });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn remove(&mut self, name: &str) -> Option<ParamEntry<T>> {
        let pos = self.index.remove(name)?;
        let entry = self.entries.remove(pos);
        for v in self.index.values_mut() {
            if *v > pos {
                *v -= 1;
            }
        }
        Some(entry)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        match self.id(name) {
            Some(id) => Ok(id),
            None => bail!(Config, "unknown parameter `{}`", name),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(self.value(self.require(name)?))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let id = self.require(name)?;
        Ok(self.value_mut(id))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn freeze_all(&mut self) {
        self.entries.iter_mut().for_each(|e| e.trainable = false);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| a.name == b.name && a.value.bit_eq(&b.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remove_reindexes() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[1]), true).unwrap();
        s.insert("b", Tensor::zeros(&[2]), true).unwrap();
        s.insert("c", Tensor::zeros(&[3]), false).unwrap();
        assert!(s.insert("b", Tensor::zeros(&[1]), true).is_err());
        s.remove("a").unwrap();
        assert_eq!(s.value(s.id("c").unwrap()).numel(), 3);
        assert_eq!(s.num_trainable_scalars(), 2);
    }
}
