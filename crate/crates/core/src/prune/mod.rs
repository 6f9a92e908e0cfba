//! Magnitude pruning masks and storage accounting.

mod storage;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::{words_for, Bitset};
use crate::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;
use crate::wire::{Reader, Writer};

pub use storage::{csr_bits_estimate, storage_report, StorageParams, StorageReport, ALPHA_OVERHEAD_WARN_FRACTION};

pub const IQMK_MAGIC: &[u8; 4] = b"IQMK";
pub const IQMK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneScope {
    #[default]
    PerTensor,
    Global,
}

impl std::str::FromStr for PruneScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-tensor" => Ok(PruneScope::PerTensor),
            "global" => Ok(PruneScope::Global),
            other => Err(format!("unknown pruning scope {other:?} (per-tensor | global)")),
        }
    }
}

/// Survivor bits (1 = kept) of one tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMask {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub bits: Bitset,
}

impl TensorMask {
    pub fn survivors(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Pruning masks for the selected tensors of a bundle. Tensors without an
/// entry are not pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    tensors: Vec<TensorMask>,
    pub rate: f64,
    pub scope: PruneScope,
}

impl PruneMask {
    pub fn new(tensors: Vec<TensorMask>, rate: f64, scope: PruneScope) -> Result<Self> {
        for t in &tensors {
            if t.bits.len() != t.rows * t.cols {
                return Err(Error::Dimension(format!(
                    "mask for {:?} has {} bits, shape {}x{}",
                    t.name,
                    t.bits.len(),
                    t.rows,
                    t.cols
                )));
            }
        }
        Ok(Self { tensors, rate, scope })
    }

    pub fn tensors(&self) -> &[TensorMask] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&TensorMask> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn bits(&self, name: &str) -> Option<&Bitset> {
        self.get(name).map(|t| &t.bits)
    }

    pub fn total_weights(&self) -> usize {
        self.tensors.iter().map(TensorMask::len).sum()
    }

    pub fn total_survivors(&self) -> usize {
        self.tensors.iter().map(TensorMask::survivors).sum()
    }

    /// Fraction of masked weights actually pruned.
    pub fn achieved_rate(&self) -> f64 {
        let n = self.total_weights();
        if n == 0 {
            0.0
        } else {
            1.0 - self.total_survivors() as f64 / n as f64
        }
    }

    /// Zeroes pruned positions of every masked tensor in `bundle`.
    pub fn apply_to_bundle<T: Scalar>(&self, bundle: &mut ModelBundle<T>) -> Result<()> {
        for t in &self.tensors {
            let m = bundle
                .get_mut(&t.name)
                .ok_or_else(|| Error::Validation(format!("mask names unknown tensor {:?}", t.name)))?;
            apply_mask_in_place(m, &t.bits)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(IQMK_MAGIC);
        w.u32(IQMK_VERSION);
        w.u64(self.rate.to_bits());
        w.u8(match self.scope {
            PruneScope::PerTensor => 0,
            PruneScope::Global => 1,
        });
        w.u32(self.tensors.len() as u32);
        for t in &self.tensors {
            w.u16_str(&t.name)?;
            w.u32(t.rows as u32);
            w.u32(t.cols as u32);
            for &word in t.bits.words() {
                w.u64(word);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(IQMK_MAGIC)?;
        let version = r.u32()?;
        if version != IQMK_VERSION {
            return Err(Error::Format(format!("unsupported mask file version {version}")));
        }
        let rate = f64::from_bits(r.u64()?);
        let scope = match r.u8()? {
            0 => PruneScope::PerTensor,
            1 => PruneScope::Global,
            other => return Err(Error::Format(format!("unknown scope byte {other}"))),
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.u16_str()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let len = rows * cols;
            let mut words = Vec::with_capacity(words_for(len));
            for _ in 0..words_for(len) {
                words.push(r.u64()?);
            }
            tensors.push(TensorMask {
                name,
                rows,
                cols,
                bits: Bitset::from_words(words, len)?,
            });
        }
        r.expect_end()?;
        Self::new(tensors, rate, scope)
    }
}

pub fn save_mask(mask: &PruneMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mask.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<PruneMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PruneMask::from_bytes(&bytes)
}

/// Number of weights removed when pruning `rate` of `n`: `ceil(rate * n)`.
pub fn pruned_count(n: usize, rate: f64) -> usize {
    // the guard keeps e.g. 0.8 * 10000 from rounding up to 8001
    ((rate * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Marks the `rate` fraction of smallest-magnitude weights as pruned.
///
/// Only tensors accepted by `filter` are considered. Per-tensor scope prunes
/// `ceil(rate * n)` weights of every selected tensor; global scope ranks all
/// selected weights together. Equal magnitudes are pruned in index order
/// (tensor order first under global scope).
pub fn magnitude_prune<T: Scalar>(
    bundle: &ModelBundle<T>,
    rate: f64,
    scope: PruneScope,
    filter: impl Fn(&str) -> bool,
) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Validation(format!("pruning rate {rate} outside [0, 1)")));
    }
    let selected: Vec<(&str, &DenseMatrix<T>)> = bundle.iter().filter(|(n, _)| filter(n)).collect();
    let mut masks: Vec<TensorMask> = selected
        .iter()
        .map(|(n, m)| TensorMask {
            name: n.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            bits: Bitset::ones(m.len()),
        })
        .collect();

    match scope {
        PruneScope::PerTensor => {
            for ((_, m), mask) in selected.iter().zip(&mut masks) {
                let mut order: Vec<usize> = (0..m.len()).collect();
                let data = m.as_slice();
                order.sort_by(|&a, &b| {
                    data[a]
                        .abs()
                        .as_f64()
                        .total_cmp(&data[b].abs().as_f64())
                        .then(a.cmp(&b))
                });
                for &j in &order[..pruned_count(m.len(), rate)] {
                    mask.bits.set(j, false);
                }
            }
        }
        PruneScope::Global => {
            let mut order: Vec<(f64, usize, usize)> = selected
                .iter()
                .enumerate()
                .flat_map(|(t, (_, m))| m.as_slice().iter().enumerate().map(move |(j, v)| (v.abs().as_f64(), t, j)))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let count = pruned_count(order.len(), rate);
            for &(_, t, j) in &order[..count] {
                masks[t].bits.set(j, false);
            }
        }
    }
    PruneMask::new(masks, rate, scope)
}

/// Copy of `m` with pruned positions set to zero.
pub fn apply_mask<T: Scalar>(m: &DenseMatrix<T>, survivors: &Bitset) -> Result<DenseMatrix<T>> {
    let mut out = m.clone();
    apply_mask_in_place(&mut out, survivors)?;
    Ok(out)
}

pub fn apply_mask_in_place<T: Scalar>(m: &mut DenseMatrix<T>, survivors: &Bitset) -> Result<()> {
    if survivors.len() != m.len() {
        return Err(Error::Dimension(format!(
            "mask has {} bits, matrix {}x{}",
            survivors.len(),
            m.rows(),
            m.cols()
        )));
    }
    for (j, v) in m.as_mut_slice().iter_mut().enumerate() {
        if !survivors.get(j) {
            *v = T::zero();
        }
    }
    Ok(())
}
