use std::collections::HashMap;

use ndarray::Array2;

use crate::autodiff::Mat;
use crate::container::TensorFile;
use crate::error::{Error, Result};

/// Name of the thinking-token table.
pub const THINKING: &str = "thinking_tokens";

/// Ordered, named parameter arrays. The position of an array is its id in
/// autodiff graphs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Mat) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn value(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.values.iter_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.values.iter().map(|v| Array2::zeros(v.dim())).collect()
    }

    /// Stores every array under `prefix + name`. The thinking table is stored
    /// as `(1, K, hidden)`.
    pub fn write_into(&self, file: &mut TensorFile, prefix: &str) {
        for (name, value) in self.iter() {
            let key = format!("{prefix}{name}");
            if name == THINKING {
                let (k, d) = value.dim();
                let arr = value.clone().into_shape_with_order((1, k, d)).expect("thinking shape").into_dyn();
                file.insert(key, arr);
            } else {
                file.insert2(key, value);
            }
        }
    }

    /// Replaces every value with the array of the same name in `file`; shapes must match.
    pub fn read_from(&mut self, file: &TensorFile, prefix: &str) -> Result<()> {
        for id in 0..self.len() {
            let key = format!("{prefix}{}", self.names[id]);
            let loaded = file.get2(&key)?;
            if loaded.dim() != self.values[id].dim() {
                let (r, c) = self.values[id].dim();
                let (lr, lc) = loaded.dim();
                return Err(Error::ShapeMismatch { context: key, expected: vec![r, c], actual: vec![lr, lc] });
            }
            self.values[id] = loaded;
        }
        Ok(())
    }
}
