//! Named tensor collections and the IQWT model file.
//!
//! Layout (little-endian):
//!
//! ```text
//! "IQWT" | version u32 = 1 | tensor_count u32
//! per tensor: name_len u16 | name (UTF-8) | ndim u8 = 2 | dims u32 x 2 | dtype u8 = 0 (f32) | payload f32 row-major
//! footer:     metadata_count u16 | (key_len u16, key, val_len u16, val) ...
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;
use crate::wire::{Reader, Writer};

pub const IQWT_MAGIC: &[u8; 4] = b"IQWT";
pub const IQWT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Ordered set of named weight tensors plus free-form string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    tensors: Vec<(String, DenseMatrix<T>)>,
    pub metadata: BTreeMap<String, String>,
}

impl<T> Default for ModelBundle<T> {
    fn default() -> Self {
        Self {
            tensors: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a bundle, enforcing unique non-empty names.
    pub fn from_tensors(tensors: Vec<(String, DenseMatrix<T>)>) -> Result<Self> {
        let b = Self {
            tensors,
            metadata: BTreeMap::new(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn push(&mut self, name: impl Into<String>, m: DenseMatrix<T>) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Validation("tensor name must be non-empty".into()));
        }
        if self.get(&name).is_some() {
            return Err(Error::Validation(format!("duplicate tensor name {name:?}")));
        }
        self.tensors.push((name, m));
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, m) in &self.tensors {
            if name.is_empty() {
                return Err(Error::Validation("tensor name must be non-empty".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate tensor name {name:?}")));
            }
            if !m.is_all_finite() {
                return Err(Error::Validation(format!("tensor {name:?} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix<T>)> {
        self.tensors.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseMatrix<T>> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Replaces an existing tensor of the same shape.
    pub fn replace(&mut self, name: &str, m: DenseMatrix<T>) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| Error::Validation(format!("no tensor named {name:?}")))?;
        slot.ensure_same_shape(&m, name)?;
        *slot = m;
        Ok(())
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            tensors: self
                .tensors
                .iter()
                .map(|(n, m)| (n.clone(), m.cast()))
                .collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Serializes to the IQWT byte layout. Deterministic for identical input.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer::new();
        w.bytes(IQWT_MAGIC);
        w.u32(IQWT_VERSION);
        w.u32(u32_len(self.tensors.len(), "tensor count")?);
        for (name, m) in &self.tensors {
            w.u16_str(name)?;
            w.u8(2);
            w.u32(u32_len(m.rows(), "rows")?);
            w.u32(u32_len(m.cols(), "cols")?);
            w.u8(DTYPE_F32);
            for &v in m.as_slice() {
                w.f32(v.as_f32());
            }
        }
        let count = u16::try_from(self.metadata.len())
            .map_err(|_| Error::Validation("too many metadata entries".into()))?;
        w.u16(count);
        for (k, v) in &self.metadata {
            w.u16_str(k)?;
            w.u16_str(v)?;
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(IQWT_MAGIC)?;
        let version = r.u32()?;
        if version != IQWT_VERSION {
            return Err(Error::Format(format!("unsupported IQWT version {version}")));
        }
        let count = r.u32()? as usize;
        let mut bundle = ModelBundle::new();
        for _ in 0..count {
            let name = r.u16_str()?;
            let ndim = r.u8()?;
            if ndim != 2 {
                return Err(Error::Format(format!("tensor {name:?}: ndim {ndim}, only 2 is supported")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name:?}: unknown dtype {dtype}")));
            }
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Corruption(format!("tensor {name:?}: dims overflow")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Corruption("payload overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            let m = DenseMatrix::new(rows, cols, data)
                .map_err(|e| Error::Corruption(format!("tensor {name:?}: {e}")))?;
            bundle
                .push(name, m)
                .map_err(|e| Error::Corruption(e.to_string()))?;
        }
        let meta = r.u16()?;
        for _ in 0..meta {
            let k = r.u16_str()?;
            let v = r.u16_str()?;
            bundle.metadata.insert(k, v);
        }
        r.expect_end()?;
        Ok(bundle)
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Validation(format!("{what} {n} exceeds u32")))
}

pub fn save_model<T: Scalar>(bundle: &ModelBundle<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = bundle.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelBundle<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelBundle<f64> {
        let mut b = ModelBundle::new();
        b.push("a", DenseMatrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64 * 0.1 - 0.2))
            .unwrap();
        b.push("bias", DenseMatrix::row_vector(vec![1.0 / 3.0, -7.25]).unwrap())
            .unwrap();
        b.metadata.insert("kind".into(), "test".into());
        b.metadata.insert("seed".into(), "3".into());
        b
    }

    #[test]
    fn empty_bundle_round_trips() {
        let b = ModelBundle::<f64>::new();
        let back = ModelBundle::<f64>::from_bytes(&b.to_bytes().unwrap()).unwrap();
        assert_eq!(back.len(), 0);
        assert!(back.metadata.is_empty());
    }

    #[test]
    fn round_trip_to_single_precision() {
        let b = sample();
        let back = ModelBundle::<f64>::from_bytes(&b.to_bytes().unwrap()).unwrap();
        assert_eq!(back.metadata, b.metadata);
        for ((n1, m1), (n2, m2)) in b.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(m1.shape(), m2.shape());
            for (x, y) in m1.as_slice().iter().zip(m2.as_slice()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        // second pass is exact
        assert_eq!(back.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(sample().to_bytes().unwrap(), sample().to_bytes().unwrap());
    }

    #[test]
    fn duplicate_names_rejected() {
        let m = DenseMatrix::<f64>::zeros(1, 1);
        assert!(ModelBundle::from_tensors(vec![("x".into(), m.clone()), ("x".into(), m.clone())]).is_err());
        assert!(ModelBundle::from_tensors(vec![("".into(), m)]).is_err());
    }

    #[test]
    fn bad_magic_version_dtype_truncation() {
        let bytes = sample().to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelBundle::<f64>::from_bytes(&bad), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(ModelBundle::<f64>::from_bytes(&bad), Err(Error::Format(_))));

        // dtype byte of the first tensor: 4 magic + 4 version + 4 count + 2 + 1 name + 1 ndim + 8 dims
        let mut bad = bytes.clone();
        assert_eq!(bad[24], 0);
        bad[24] = 1;
        assert!(matches!(ModelBundle::<f64>::from_bytes(&bad), Err(Error::Format(_))));

        let cut = &bytes[..bytes.len() - 7];
        assert!(matches!(ModelBundle::<f64>::from_bytes(cut), Err(Error::Corruption(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.iqwt");
        save_model(&sample(), &p).unwrap();
        let back: ModelBundle<f32> = load_model(&p).unwrap();
        assert_eq!(back.get("bias").unwrap().as_slice(), &[1.0f32 / 3.0, -7.25]);
        assert!(matches!(
            load_model::<f64>(dir.path().join("missing.iqwt")),
            Err(Error::Io { .. })
        ));
    }
}
