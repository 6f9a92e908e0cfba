use rayon::prelude::*;

use crate::bits::Bitset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

use super::binary::check_bits;
use super::{QuantConfig, QuantSegment};

/// Column range `[start, end)` covered by table `t` of `tables` in a row of
/// `cols` weights.
#[inline]
pub fn segment_bounds(cols: usize, tables: usize, t: usize) -> (usize, usize) {
    (t * cols / tables, (t + 1) * cols / tables)
}

/// A matrix quantized row by row, `tables_per_row` independent tables per row.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor<T> {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) bits: usize,
    pub(crate) tables_per_row: usize,
    /// Row-major: row `r`, table `t` at `r * tables_per_row + t`.
    pub(crate) segments: Vec<QuantSegment<T>>,
    /// Survivor bits over the whole matrix, row-major.
    pub(crate) mask: Option<Bitset>,
}

impl<T: Scalar> QuantizedTensor<T> {
    pub(crate) fn validate_layout(rows: usize, cols: usize, bits: usize, tables: usize) -> Result<()> {
        check_bits(bits)?;
        if tables == 0 {
            return Err(Error::Validation("tables_per_row must be at least 1".into()));
        }
        if tables > cols {
            return Err(Error::Validation(format!(
                "tables_per_row {tables} exceeds the row length {cols}"
            )));
        }
        let _ = rows;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn tables_per_row(&self) -> usize {
        self.tables_per_row
    }

    pub fn mask(&self) -> Option<&Bitset> {
        self.mask.as_ref()
    }

    pub fn segment(&self, row: usize, table: usize) -> &QuantSegment<T> {
        &self.segments[row * self.tables_per_row + table]
    }

    pub fn segments(&self) -> &[QuantSegment<T>] {
        &self.segments
    }

    /// Mask bits of one segment, if the tensor is masked.
    pub fn segment_mask(&self, row: usize, table: usize) -> Option<Bitset> {
        let (s, e) = segment_bounds(self.cols, self.tables_per_row, table);
        self.mask
            .as_ref()
            .map(|m| m.slice(row * self.cols + s, row * self.cols + e))
    }

    pub fn cast<U: Scalar>(&self) -> QuantizedTensor<U> {
        QuantizedTensor {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits,
            tables_per_row: self.tables_per_row,
            segments: self
                .segments
                .iter()
                .map(|s| QuantSegment::new(s.alphas().iter().map(|a| U::of(a.as_f64())).collect(), s.planes().to_vec()))
                .collect(),
            mask: self.mask.clone(),
        }
    }
}

/// Per-segment outcome of [`quantize_tensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDiagnostics<T> {
    pub row: usize,
    pub table: usize,
    pub sse: T,
    pub iterations: usize,
    pub ridge_fallback: bool,
    /// Every weight of the segment was pruned; alphas are zero.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantReport<T> {
    pub segments: Vec<SegmentDiagnostics<T>>,
}

impl<T: Scalar> QuantReport<T> {
    /// Residual SSE over all unmasked positions.
    pub fn total_sse(&self) -> T {
        self.segments.iter().map(|s| s.sse).sum()
    }

    pub fn empty_segments(&self) -> usize {
        self.segments.iter().filter(|s| s.empty).count()
    }

    pub fn ridge_fallbacks(&self) -> usize {
        self.segments.iter().filter(|s| s.ridge_fallback).count()
    }
}

/// Quantizes every row of `m` independently.
///
/// Each row is cut into `cfg.tables_per_row` contiguous segments and each
/// segment is fitted on its unmasked weights. Rows run in parallel on the
/// current rayon pool; the result does not depend on scheduling.
pub fn quantize_tensor<T: Scalar>(
    m: &DenseMatrix<T>,
    cfg: &QuantConfig,
    mask: Option<&Bitset>,
) -> Result<(QuantizedTensor<T>, QuantReport<T>)> {
    let (rows, cols) = m.shape();
    QuantizedTensor::<T>::validate_layout(rows, cols, cfg.bits, cfg.tables_per_row)?;
    if let Some(mk) = mask {
        if mk.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "mask covers {} positions, tensor has {}",
                mk.len(),
                rows * cols
            )));
        }
    }
    let tables = cfg.tables_per_row;

    let per_row: Vec<Result<Vec<(QuantSegment<T>, SegmentDiagnostics<T>)>>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let row = m.row(r);
            (0..tables)
                .map(|t| {
                    let (s, e) = segment_bounds(cols, tables, t);
                    let seg_mask = mask.map(|mk| mk.slice(r * cols + s, r * cols + e));
                    let live = seg_mask.as_ref().map_or(e - s, Bitset::count_ones);
                    if live == 0 {
                        return Ok((
                            QuantSegment::empty(cfg.bits, e - s),
                            SegmentDiagnostics {
                                row: r,
                                table: t,
                                sse: T::zero(),
                                iterations: 0,
                                ridge_fallback: false,
                                empty: true,
                            },
                        ));
                    }
                    let fit = cfg.fit(&row[s..e], seg_mask.as_ref())?;
                    Ok((
                        fit.segment,
                        SegmentDiagnostics {
                            row: r,
                            table: t,
                            sse: fit.sse,
                            iterations: fit.iterations,
                            ridge_fallback: fit.ridge_fallback,
                            empty: false,
                        },
                    ))
                })
                .collect()
        })
        .collect();

    let mut segments = Vec::with_capacity(rows * tables);
    let mut diags = Vec::with_capacity(rows * tables);
    for row in per_row {
        for (seg, d) in row? {
            segments.push(seg);
            diags.push(d);
        }
    }
    Ok((
        QuantizedTensor {
            rows,
            cols,
            bits: cfg.bits,
            tables_per_row: tables,
            segments,
            mask: mask.cloned(),
        },
        QuantReport { segments: diags },
    ))
}

/// Expands a quantized tensor back to dense weights; masked positions are 0.
pub fn dequantize<T: Scalar>(q: &QuantizedTensor<T>) -> DenseMatrix<T> {
    let mut out = DenseMatrix::zeros(q.rows, q.cols);
    for r in 0..q.rows {
        for t in 0..q.tables_per_row {
            let (s, e) = segment_bounds(q.cols, q.tables_per_row, t);
            let seg = q.segment(r, t);
            let row = out.row_mut(r);
            for j in s..e {
                let live = q.mask.as_ref().is_none_or(|m| m.get(r * q.cols + j));
                if live {
                    row[j] = seg.value(j - s);
                }
            }
        }
    }
    out
}
