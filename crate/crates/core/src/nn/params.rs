use indexmap::IndexMap;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Named trainable arrays in insertion order.
///
/// Shapes are fixed once an entry is inserted. Every mutable borrow bumps
/// `version`, which lets a recorded forward tape detect that the weights it
/// was computed with have since changed.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    entries: IndexMap<String, Matrix>,
    version: u64,
}

/// Gradients share the parameter layout.
pub type Gradients = ParameterSet;

impl PartialEq for ParameterSet {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a new entry and returns its slot index.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<usize> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        let (idx, _) = self.entries.insert_full(name, value);
        self.version += 1;
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    #[inline]
    pub fn at(&self, idx: usize) -> &Matrix {
        &self.entries[idx]
    }

    #[inline]
    pub fn at_mut(&mut self, idx: usize) -> &mut Matrix {
        self.version += 1;
        &mut self.entries[idx]
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.version += 1;
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn values(&self) -> impl Iterator<Item = &Matrix> {
        self.entries.values()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.version += 1;
        self.entries.values_mut()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
            version: 0,
        }
    }

    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Matrix::len).sum()
    }

    /// Replaces values from another set with an identical layout.
    pub fn assign(&mut self, other: &ParameterSet) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::shape("parameter layouts differ"));
        }
        for (dst, src) in self.entries.values_mut().zip(other.entries.values()) {
            dst.data_mut().copy_from_slice(src.data());
        }
        self.version += 1;
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |m, v| m.max(v.max_abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParameterSet::new();
        p.insert("w", Matrix::zeros(2, 2)).unwrap();
        assert!(p.insert("w", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn iteration_order_is_insertion_order() {
        let mut p = ParameterSet::new();
        for name in ["z", "a", "m"] {
            p.insert(name, Matrix::zeros(1, 1)).unwrap();
        }
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["z", "a", "m"]);
    }

    #[test]
    fn mutation_bumps_version() {
        let mut p = ParameterSet::new();
        let i = p.insert("w", Matrix::zeros(1, 1)).unwrap();
        let v = p.version();
        p.at_mut(i).set(0, 0, 1.0);
        assert!(p.version() > v);
    }
}
