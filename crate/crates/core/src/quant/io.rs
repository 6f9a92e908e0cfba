//! IQQT quantized-tensor file.
//!
//! ```text
//! "IQQT" | version u32 = 1 | rows u32 | cols u32 | k u8 | tables_per_row u16
//!        | alpha_dtype u8 (0 = f32, 1 = f16) | mask_present u8
//! per row, per table: k alphas | k bit planes, each ceil(len / 64) u64 words
//! if mask_present:    ceil(rows * cols / 64) u64 words, row-major
//! ```

use std::fs;
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::bits::{words_for, Bitset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::wire::{Reader, Writer};

use super::tensor::segment_bounds;
use super::{QuantSegment, QuantizedTensor};

pub const IQQT_MAGIC: &[u8; 4] = b"IQQT";
pub const IQQT_VERSION: u32 = 1;

/// Storage precision of the scaling factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaDtype {
    #[default]
    F32,
    F16,
}

impl AlphaDtype {
    pub fn code(self) -> u8 {
        match self {
            AlphaDtype::F32 => 0,
            AlphaDtype::F16 => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(AlphaDtype::F32),
            1 => Ok(AlphaDtype::F16),
            other => Err(Error::Format(format!("unknown alpha dtype {other}"))),
        }
    }

    pub fn bits(self) -> usize {
        match self {
            AlphaDtype::F32 => 32,
            AlphaDtype::F16 => 16,
        }
    }
}

impl std::str::FromStr for AlphaDtype {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(AlphaDtype::F32),
            "f16" => Ok(AlphaDtype::F16),
            other => Err(format!("unknown alpha dtype {other:?} (f32 | f16)")),
        }
    }
}

impl<T: Scalar> QuantizedTensor<T> {
    pub fn to_bytes(&self, alpha_dtype: AlphaDtype) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(IQQT_MAGIC);
        w.u32(IQQT_VERSION);
        w.u32(to_u32(self.rows, "rows")?);
        w.u32(to_u32(self.cols, "cols")?);
        w.u8(self.bits as u8);
        w.u16(
            u16::try_from(self.tables_per_row)
                .map_err(|_| Error::Validation(format!("{} tables per row exceeds u16", self.tables_per_row)))?,
        );
        w.u8(alpha_dtype.code());
        w.u8(self.mask.is_some() as u8);
        for seg in &self.segments {
            for &a in seg.alphas() {
                match alpha_dtype {
                    AlphaDtype::F32 => w.f32(a.as_f32()),
                    AlphaDtype::F16 => w.u16(f16::from_f64(a.as_f64()).to_bits()),
                }
            }
            for plane in seg.planes() {
                for &word in plane.words() {
                    w.u64(word);
                }
            }
        }
        if let Some(mask) = &self.mask {
            for &word in mask.words() {
                w.u64(word);
            }
        }
        Ok(w.finish())
    }

    /// Parses an IQQT file, returning the tensor and the alpha precision it
    /// was stored with.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, AlphaDtype)> {
        let mut r = Reader::new(bytes);
        r.expect_magic(IQQT_MAGIC)?;
        let version = r.u32()?;
        if version != IQQT_VERSION {
            return Err(Error::Format(format!("unsupported IQQT version {version}")));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let bits = r.u8()? as usize;
        let tables = r.u16()? as usize;
        let dtype = AlphaDtype::from_code(r.u8()?)?;
        let mask_present = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("mask_present byte {other}"))),
        };
        QuantizedTensor::<T>::validate_layout(rows, cols, bits, tables).map_err(|e| Error::Format(e.to_string()))?;

        let mut segments = Vec::with_capacity(rows.saturating_mul(tables).min(1 << 24));
        for _ in 0..rows {
            for t in 0..tables {
                let (s, e) = segment_bounds(cols, tables, t);
                let mut alphas = Vec::with_capacity(bits);
                for _ in 0..bits {
                    let a = match dtype {
                        AlphaDtype::F32 => r.f32()? as f64,
                        AlphaDtype::F16 => f16::from_bits(r.u16()?).to_f64(),
                    };
                    if !a.is_finite() {
                        return Err(Error::Corruption("non-finite alpha".into()));
                    }
                    alphas.push(T::of(a));
                }
                let mut planes = Vec::with_capacity(bits);
                for _ in 0..bits {
                    planes.push(read_bitset(&mut r, e - s)?);
                }
                segments.push(QuantSegment::new(alphas, planes));
            }
        }
        let mask = if mask_present {
            Some(read_bitset(&mut r, rows * cols)?)
        } else {
            None
        };
        r.expect_end()?;
        Ok((
            QuantizedTensor {
                rows,
                cols,
                bits,
                tables_per_row: tables,
                segments,
                mask,
            },
            dtype,
        ))
    }
}

fn read_bitset(r: &mut Reader<'_>, len: usize) -> Result<Bitset> {
    let mut words = Vec::with_capacity(words_for(len));
    for _ in 0..words_for(len) {
        words.push(r.u64()?);
    }
    Bitset::from_words(words, len)
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Validation(format!("{what} {n} exceeds u32")))
}

pub fn save_quantized<T: Scalar>(q: &QuantizedTensor<T>, alpha_dtype: AlphaDtype, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, q.to_bytes(alpha_dtype)?).map_err(|e| Error::io(path, e))
}

pub fn load_quantized<T: Scalar>(path: impl AsRef<Path>) -> Result<(QuantizedTensor<T>, AlphaDtype)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    QuantizedTensor::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{quantize_tensor, Method, QuantConfig};
    use crate::tensor::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(masked: bool) -> QuantizedTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DenseMatrix::from_fn(5, 70, |_, _| rng.gen_range(-1.0..1.0));
        let mask = masked.then(|| Bitset::from_fn(350, |_| rng.gen_bool(0.4)));
        quantize_tensor(&m, &QuantConfig::new(3, 3, Method::Alternating), mask.as_ref())
            .unwrap()
            .0
    }

    #[test]
    fn round_trip_f32_is_exact_after_rounding() {
        for masked in [false, true] {
            let q = sample(masked);
            let bytes = q.to_bytes(AlphaDtype::F32).unwrap();
            let (back, dtype) = QuantizedTensor::<f64>::from_bytes(&bytes).unwrap();
            assert_eq!(dtype, AlphaDtype::F32);
            assert_eq!(back.mask(), q.mask());
            for (a, b) in q.segments().iter().zip(back.segments()) {
                assert_eq!(a.planes(), b.planes());
                for (x, y) in a.alphas().iter().zip(b.alphas()) {
                    assert_eq!(*x as f32 as f64, *y);
                }
            }
            assert_eq!(back.to_bytes(AlphaDtype::F32).unwrap(), bytes);
        }
    }

    #[test]
    fn f16_alphas_round_trip() {
        let q = sample(true);
        let bytes = q.to_bytes(AlphaDtype::F16).unwrap();
        let (back, dtype) = QuantizedTensor::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(dtype, AlphaDtype::F16);
        assert_eq!(back.to_bytes(AlphaDtype::F16).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let q = sample(false);
        let bytes = q.to_bytes(AlphaDtype::F32).unwrap();
        assert_eq!(&bytes[..4], b"IQQT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 70);
        assert_eq!(bytes[16], 3);
        assert_eq!(u16::from_le_bytes(bytes[17..19].try_into().unwrap()), 3);
        assert_eq!(bytes[19], 0);
        assert_eq!(bytes[20], 0);
        // 70 columns in 3 tables: 23, 23, 24 -> one word per plane
        let per_segment = 3 * 4 + 3 * 8;
        assert_eq!(bytes.len(), 21 + 5 * 3 * per_segment);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = sample(true).to_bytes(AlphaDtype::F32).unwrap();
        assert!(matches!(QuantizedTensor::<f64>::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Corruption(_))));
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(QuantizedTensor::<f64>::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[19] = 7;
        assert!(matches!(QuantizedTensor::<f64>::from_bytes(&bad), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(QuantizedTensor::<f64>::from_bytes(&extra), Err(Error::Corruption(_))));
    }
}
