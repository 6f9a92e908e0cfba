//! Row-major dense matrices and the squared-error metric used throughout.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major rank-2 tensor. Vectors are stored as `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    /// Builds a matrix, rejecting a wrong data length or non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Single-row matrix wrapping a vector.
    pub fn row_vector(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(1, n, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts the element type, e.g. to round through single precision.
    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// Sum of squared differences, `sum_i (a_i - b_i)^2`.
///
/// This is the quantity reported as "MSE" everywhere in the tool: the squared
/// Euclidean distance, not divided by the element count.
pub fn sse<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<T> {
    a.ensure_same_shape(b, "sse")?;
    Ok(sse_slices(a.as_slice(), b.as_slice()))
}

pub(crate) fn sse_slices<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_checks_length_and_finiteness() {
        assert!(DenseMatrix::<f64>::new(2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Validation(_))
        ));
        assert!(DenseMatrix::new(1, 2, vec![1.0f32, 2.0]).is_ok());
    }

    #[test]
    fn sse_hand_values() {
        let a = DenseMatrix::row_vector(vec![1.0, 2.0]).unwrap();
        let z = DenseMatrix::zeros(1, 2);
        assert_eq!(sse(&a, &z).unwrap(), 5.0);
        assert_eq!(sse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn sse_shape_mismatch() {
        let a = DenseMatrix::<f64>::zeros(2, 3);
        let b = DenseMatrix::<f64>::zeros(3, 2);
        assert!(matches!(sse(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn sse_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: DenseMatrix<f64> = DenseMatrix::from_fn(10, 100, |_, _| rng.gen_range(-3.0..3.0));
        let b = DenseMatrix::from_fn(10, 100, |_, _| rng.gen_range(-3.0..3.0));
        let mut naive = 0.0f64;
        for r in 0..10 {
            for c in 0..100 {
                naive += (a.get(r, c) - b.get(r, c)).powi(2);
            }
        }
        let got = sse(&a, &b).unwrap();
        assert!((got - naive).abs() <= 1e-9 * naive);
    }

    #[test]
    fn sse_generic_over_f32() {
        let a = DenseMatrix::row_vector(vec![1.0f32, 2.0]).unwrap();
        assert_eq!(sse(&a, &DenseMatrix::zeros(1, 2)).unwrap(), 5.0f32);
    }

    proptest::proptest! {
        #[test]
        fn sse_symmetric_and_quadratic(
            xs in proptest::collection::vec(-100.0f64..100.0, 1..40),
            c in -5.0f64..5.0,
        ) {
            let a = DenseMatrix::row_vector(xs.clone()).unwrap();
            let b = DenseMatrix::row_vector(xs.iter().rev().copied().collect()).unwrap();
            let ab = sse(&a, &b).unwrap();
            proptest::prop_assert_eq!(ab, sse(&b, &a).unwrap());
            proptest::prop_assert_eq!(sse(&a, &a).unwrap(), 0.0);
            let scaled = sse(&a.scaled(c), &b.scaled(c)).unwrap();
            proptest::prop_assert!((scaled - c * c * ab).abs() <= 1e-9 * (1.0 + c * c * ab));
        }
    }
}
