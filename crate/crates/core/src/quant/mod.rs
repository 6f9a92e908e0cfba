//! Binary-code weight quantization.
//!
//! A segment of `n` weights is approximated as `sum_i alpha_i * b_i` with
//! `b_i` in `{-1, +1}^n`. Three fitting methods are provided:
//!
//! * greedy: each plane is the closed-form 1-bit fit of the previous residual;
//! * refined: greedy planes, then all alphas re-solved by least squares;
//! * alternating: refined start, then alternate nearest-codebook plane
//!   assignment and least-squares alphas until the SSE stalls.
//!
//! Rows of a matrix are quantized independently, optionally split into
//! several contiguous tables per row.

mod alternating;
mod binary;
mod codebook;
mod io;
mod refine;
mod tensor;

use serde::{Deserialize, Serialize};

use crate::bits::Bitset;
use crate::scalar::Scalar;

pub use alternating::{alternating_quantize, quantize_refined, SegmentFit, DEFAULT_MAX_ITERS, DEFAULT_TOL};
pub use binary::{quantize_1bit, quantize_greedy};
pub use codebook::{build_codebook, nearest_code, Codebook};
pub use io::{load_quantized, save_quantized, AlphaDtype, IQQT_MAGIC, IQQT_VERSION};
pub use refine::{refine_alphas, RefinedAlphas};
pub use tensor::{dequantize, quantize_tensor, segment_bounds, QuantReport, QuantizedTensor, SegmentDiagnostics};

/// Largest supported bit count; the codebook has `2^k` entries.
pub const MAX_BITS: usize = 8;

/// One table: `k` scaling factors and `k` sign planes over `len` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantSegment<T> {
    alphas: Vec<T>,
    planes: Vec<Bitset>,
}

impl<T: Scalar> QuantSegment<T> {
    pub fn new(alphas: Vec<T>, planes: Vec<Bitset>) -> Self {
        debug_assert_eq!(alphas.len(), planes.len());
        debug_assert!(planes.windows(2).all(|p| p[0].len() == p[1].len()));
        Self { alphas, planes }
    }

    /// Placeholder for a segment whose weights are all pruned.
    pub(crate) fn empty(k: usize, len: usize) -> Self {
        Self::new(vec![T::zero(); k], vec![Bitset::ones(len); k])
    }

    pub fn bits(&self) -> usize {
        self.alphas.len()
    }

    pub fn len(&self) -> usize {
        self.planes.first().map_or(0, Bitset::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }

    pub fn planes(&self) -> &[Bitset] {
        &self.planes
    }

    pub fn plane(&self, i: usize) -> &Bitset {
        &self.planes[i]
    }

    pub fn with_alphas(&self, alphas: Vec<T>) -> Self {
        assert_eq!(alphas.len(), self.alphas.len());
        Self::new(alphas, self.planes.clone())
    }

    /// Reconstructed value at position `j`, ignoring any mask.
    #[inline]
    pub fn value(&self, j: usize) -> T {
        let mut v = T::zero();
        for (a, p) in self.alphas.iter().zip(&self.planes) {
            if p.get(j) {
                v += *a;
            } else {
                v -= *a;
            }
        }
        v
    }

    /// Reconstruction with masked positions set to zero.
    pub fn dequantize(&self, mask: Option<&Bitset>) -> Vec<T> {
        (0..self.len())
            .map(|j| if binary::is_live(mask, j) { self.value(j) } else { T::zero() })
            .collect()
    }

    /// Squared reconstruction error over the unmasked positions of `w`.
    pub fn sse(&self, w: &[T], mask: Option<&Bitset>) -> T {
        w.iter()
            .enumerate()
            .filter(|&(j, _)| binary::is_live(mask, j))
            .map(|(j, &x)| {
                let d = x - self.value(j);
                d * d
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Greedy,
    Refined,
    #[default]
    Alternating,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(Method::Greedy),
            "refined" => Ok(Method::Refined),
            "alternating" => Ok(Method::Alternating),
            other => Err(format!("unknown method {other:?} (greedy | refined | alternating)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Greedy => "greedy",
            Method::Refined => "refined",
            Method::Alternating => "alternating",
        })
    }
}

/// Settings for quantizing a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantConfig {
    pub bits: usize,
    pub tables_per_row: usize,
    pub method: Method,
    /// Relative SSE improvement below which alternation stops.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 1,
            tables_per_row: 1,
            method: Method::Alternating,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl QuantConfig {
    pub fn new(bits: usize, tables_per_row: usize, method: Method) -> Self {
        Self {
            bits,
            tables_per_row,
            method,
            ..Self::default()
        }
    }

    /// Fits one segment with the configured method.
    pub fn fit<T: Scalar>(&self, w: &[T], mask: Option<&Bitset>) -> crate::Result<SegmentFit<T>> {
        match self.method {
            Method::Greedy => {
                let segment = quantize_greedy(w, self.bits, mask)?;
                Ok(SegmentFit {
                    sse: segment.sse(w, mask),
                    segment,
                    iterations: 0,
                    ridge_fallback: false,
                })
            }
            Method::Refined => quantize_refined(w, self.bits, mask),
            Method::Alternating => alternating_quantize(w, self.bits, mask, self.tol, self.max_iters),
        }
    }
}
