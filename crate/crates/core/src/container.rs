//! Named-array binary container.
//!
//! Files use the safetensors layout: an 8-byte little-endian header length, a
//! JSON header mapping each array name to its dtype, shape and byte range, then
//! the raw little-endian payload. Dataset tensors are written as `F32`;
//! checkpoints use `F64` so a save/load cycle is lossless. A free-form string
//! metadata map rides along in the header.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub arrays: BTreeMap<String, ArrayD<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: ArrayD<f64>) {
        self.arrays.insert(name.into(), array);
    }

    pub fn insert2(&mut self, name: impl Into<String>, array: &Array2<f64>) {
        self.arrays.insert(name.into(), array.clone().into_dyn());
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays.get(name).ok_or_else(|| Error::MissingArray(name.to_string()))
    }

    pub fn get2(&self, name: &str) -> Result<Array2<f64>> {
        let a = self.get(name)?;
        let shape = a.shape().to_vec();
        let (rows, cols) = match shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => {
                let cols = *shape.last().unwrap_or(&1);
                (a.len() / cols.max(1), cols)
            }
        };
        Array2::from_shape_vec((rows, cols), a.iter().copied().collect()).map_err(|e| Error::Container(e.to_string()))
    }

    pub fn to_bytes(&self, precision: Precision) -> Result<Vec<u8>> {
        let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .arrays
            .iter()
            .map(|(name, a)| {
                let bytes = match precision {
                    Precision::F32 => a.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
                    Precision::F64 => a.iter().flat_map(|&v| v.to_le_bytes()).collect(),
                };
                (name.clone(), a.shape().to_vec(), bytes)
            })
            .collect();
        let dtype = match precision {
            Precision::F32 => Dtype::F32,
            Precision::F64 => Dtype::F64,
        };
        let views = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(dtype, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Container(format!("{name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        let meta = if meta.is_empty() { None } else { Some(meta) };
        safetensors::serialize(views, &meta).map_err(|e| Error::Container(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Container(e.to_string()))?;
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Container(e.to_string()))?;
        let mut arrays = BTreeMap::new();
        for (name, view) in st.tensors() {
            let data: Vec<f64> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect(),
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
                other => return Err(Error::Container(format!("{name}: unsupported dtype {other:?}"))),
            };
            let array = ArrayD::from_shape_vec(IxDyn(view.shape()), data).map_err(|e| Error::Container(e.to_string()))?;
            arrays.insert(name, array);
        }
        let metadata = header.metadata().clone().unwrap_or_default().into_iter().collect();
        Ok(Self { arrays, metadata })
    }

    pub fn write(&self, path: &Path, precision: Precision) -> Result<()> {
        fs::write(path, self.to_bytes(precision)?).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).at(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn f64_is_lossless_and_f32_rounds() {
        let mut f = TensorFile::new();
        f.insert2("w", &array![[0.1, 1.0 / 3.0], [-2.5, 1e-9]]);
        f.insert("v", ArrayD::from_shape_vec(IxDyn(&[1, 2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        f.metadata.insert("kind".into(), "test".into());

        let back = TensorFile::from_bytes(&f.to_bytes(Precision::F64).unwrap()).unwrap();
        assert_eq!(back, f);

        let back32 = TensorFile::from_bytes(&f.to_bytes(Precision::F32).unwrap()).unwrap();
        assert_eq!(back32.get("v").unwrap().shape(), &[1, 2, 2]);
        let w = back32.get2("w").unwrap();
        assert_eq!(w[[0, 1]], (1.0f32 / 3.0) as f64);
        assert_eq!(back32.metadata["kind"], "test");
    }

    #[test]
    fn header_is_little_endian_length_prefixed() {
        let mut f = TensorFile::new();
        f.insert2("a", &array![[1.0f64]]);
        let bytes = f.to_bytes(Precision::F32).unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(header["a"]["dtype"], "F32");
        assert_eq!(&bytes[bytes.len() - 4..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn missing_array_is_an_error() {
        assert!(matches!(TensorFile::new().get("nope"), Err(Error::MissingArray(_))));
    }
}
