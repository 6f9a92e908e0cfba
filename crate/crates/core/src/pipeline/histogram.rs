use std::path::Path;

use crate::error::{Error, Result};
use crate::quant::{dequantize, QuantizedTensor};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

/// Equal-width histogram over `[-max|w|, max|w|]` as `(left edge, count)`.
///
/// An all-zero matrix uses `[-1, 1]`.
pub fn histogram<T: Scalar>(m: &DenseMatrix<T>, bins: usize) -> Result<Vec<(f64, usize)>> {
    if bins < 2 {
        return Err(Error::Validation(format!("histogram needs at least 2 bins, got {bins}")));
    }
    let mut range = m.max_abs().as_f64();
    if range == 0.0 {
        range = 1.0;
    }
    let width = 2.0 * range / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in m.as_slice() {
        let b = ((v.as_f64() + range) / width).floor() as isize;
        counts[b.clamp(0, bins as isize - 1) as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (-range + i as f64 * width, c))
        .collect())
}

pub fn write_histogram_csv(hist: &[(f64, usize)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["bin_left_edge", "count"]).map_err(|e| csv_error(path, e))?;
    for (edge, count) in hist {
        w.write_record([format!("{edge:.9e}"), count.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Writes the histogram of a dense matrix.
pub fn histogram_export<T: Scalar>(m: &DenseMatrix<T>, bins: usize, path: &Path) -> Result<()> {
    write_histogram_csv(&histogram(m, bins)?, path)
}

/// Writes the histogram of a quantized tensor's dequantized values.
pub fn histogram_export_quantized<T: Scalar>(q: &QuantizedTensor<T>, bins: usize, path: &Path) -> Result<()> {
    histogram_export(&dequantize(q), bins, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{quantize_tensor, Method, QuantConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_matrix_single_bin() {
        let m = DenseMatrix::<f64>::filled(3, 4, 0.7);
        let h = histogram(&m, 10).unwrap();
        assert_eq!(h.iter().filter(|(_, c)| *c > 0).count(), 1);
        assert_eq!(h[0].0, -0.7);
    }

    #[test]
    fn counts_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: DenseMatrix<f64> = DenseMatrix::from_fn(17, 23, |_, _| rng.gen_range(-2.0..2.0));
        let h = histogram(&m, 33).unwrap();
        assert_eq!(h.iter().map(|(_, c)| c).sum::<usize>(), 17 * 23);
        assert!(histogram(&m, 1).is_err());
    }

    #[test]
    fn one_bit_row_has_two_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: DenseMatrix<f64> = DenseMatrix::from_fn(1, 64, |_, _| rng.gen_range(-1.0..1.0));
        let (q, _) = quantize_tensor(&m, &QuantConfig::new(1, 1, Method::Greedy), None).unwrap();
        let h = histogram(&dequantize(&q), 50).unwrap();
        assert!(h.iter().filter(|(_, c)| *c > 0).count() <= 2);
    }

    #[test]
    fn csv_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        histogram_export(&DenseMatrix::<f64>::zeros(2, 2), 4, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(histogram_export(&DenseMatrix::<f64>::zeros(2, 2), 4, &dir.path().join("no/such.csv")).is_err());
    }
}
