use indexmap::IndexMap;
use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};

use super::Real;
use crate::error::{Error, Result};

/// Ordered map of named parameter arrays. Names are unique and shapes are
/// fixed once inserted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: IndexMap<String, ArrayD<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, array: ArrayD<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, array);
        Ok(())
    }

    pub fn get(&self, name: &str) -> &ArrayD<T> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<T> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn matrix(&self, name: &str) -> ArrayView2<'_, T> {
        self.get(name)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("parameter is 2-D")
    }

    pub fn vector(&self, name: &str) -> ArrayView1<'_, T> {
        self.get(name)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("parameter is 1-D")
    }

    pub fn matrix_mut(&mut self, name: &str) -> ArrayViewMut2<'_, T> {
        self.get_mut(name)
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("parameter is 2-D")
    }

    pub fn vector_mut(&mut self, name: &str) -> ArrayViewMut1<'_, T> {
        self.get_mut(name)
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("parameter is 1-D")
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    /// Keeps only the named entries (order preserved).
    pub fn subset<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Self {
        let wanted: Vec<&str> = names.into_iter().collect();
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| wanted.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Converts the element type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| U::lit(x.as_f64()))))
                .collect(),
        }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_same_layout<U: Real>(&self, other: &ParamStore<U>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Contract(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((a, x), (b, y)) in self.iter().zip(other.iter()) {
            if a != b || x.shape() != y.shape() {
                return Err(Error::Contract(format!(
                    "layout mismatch at `{a}` {:?} vs `{b}` {:?}",
                    x.shape(),
                    y.shape()
                )));
            }
        }
        Ok(())
    }

    /// `self += scale * other`, entry by entry.
    pub fn add_scaled(&mut self, other: &ParamStore<T>, scale: T) {
        for (name, a) in self.entries.iter_mut() {
            if let Some(b) = other.entries.get(name) {
                a.scaled_add(scale, b);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .values()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Allocates a zero array under `name` if absent and returns it.
    pub fn entry_zeros(&mut self, name: &str, shape: &[usize]) -> &mut ArrayD<T> {
        self.entries
            .entry(name.to_string())
            .or_insert_with(|| ArrayD::zeros(IxDyn(shape)))
    }

    /// Bitwise equality of every entry.
    pub fn bit_equal(&self, other: &ParamStore<T>) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|((a, x), (b, y))| {
                a == b
                    && x.shape() == y.shape()
                    && x.iter()
                        .zip(y.iter())
                        .all(|(p, q)| p.as_f64().to_bits() == q.as_f64().to_bits())
            })
    }

    /// SHA-256 over names, shapes and little-endian values in insertion
    /// order.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        for (name, array) in self.iter() {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
            for &d in array.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in array.iter() {
                v.write_le(&mut bytes);
            }
        }
        crate::util::sha256_hex(&bytes)
    }
}
