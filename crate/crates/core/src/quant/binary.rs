//! Closed-form 1-bit fit and greedy residual k-bit quantization.

use crate::bits::Bitset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{QuantSegment, MAX_BITS};

/// Checks the shared preconditions and returns the survivor count.
pub(crate) fn survivor_count<T>(w: &[T], mask: Option<&Bitset>) -> Result<usize> {
    if w.is_empty() {
        return Err(Error::Dimension("cannot quantize an empty vector".into()));
    }
    match mask {
        None => Ok(w.len()),
        Some(m) if m.len() != w.len() => Err(Error::Dimension(format!(
            "mask covers {} positions, vector has {}",
            m.len(),
            w.len()
        ))),
        Some(m) => Ok(m.count_ones()),
    }
}

#[inline]
pub(crate) fn is_live(mask: Option<&Bitset>, j: usize) -> bool {
    mask.is_none_or(|m| m.get(j))
}

pub(crate) fn check_bits(k: usize) -> Result<()> {
    if k == 0 || k > MAX_BITS {
        return Err(Error::Validation(format!("bit count {k} outside 1..={MAX_BITS}")));
    }
    Ok(())
}

/// Optimal single scaled sign vector: `b = sign(w)`, `alpha = mean |w|`.
///
/// Only unmasked positions take part. Zero maps to `+1`, and masked positions
/// are stored as `+1` as well.
pub fn quantize_1bit<T: Scalar>(w: &[T], mask: Option<&Bitset>) -> Result<(T, Bitset)> {
    let n = survivor_count(w, mask)?;
    if n == 0 {
        return Err(Error::Degenerate("every position is masked".into()));
    }
    Ok(fit_sign(w, mask, n))
}

fn fit_sign<T: Scalar>(w: &[T], mask: Option<&Bitset>, live: usize) -> (T, Bitset) {
    let mut bits = Bitset::ones(w.len());
    let mut dot = T::zero();
    for (j, &x) in w.iter().enumerate() {
        if !is_live(mask, j) {
            continue;
        }
        if x < T::zero() {
            bits.set(j, false);
            dot -= x;
        } else {
            dot += x;
        }
    }
    (dot / T::of_usize(live), bits)
}

/// Greedy k-bit quantization: each bit plane is the 1-bit fit of the residual
/// left by the previous planes.
pub fn quantize_greedy<T: Scalar>(w: &[T], k: usize, mask: Option<&Bitset>) -> Result<QuantSegment<T>> {
    check_bits(k)?;
    let n = survivor_count(w, mask)?;
    if n == 0 {
        return Err(Error::Degenerate("every position is masked".into()));
    }
    let mut residual: Vec<T> = w.to_vec();
    let mut alphas = Vec::with_capacity(k);
    let mut planes = Vec::with_capacity(k);
    for _ in 0..k {
        let (alpha, bits) = fit_sign(&residual, mask, n);
        for (j, r) in residual.iter_mut().enumerate() {
            if is_live(mask, j) {
                if bits.get(j) {
                    *r -= alpha;
                } else {
                    *r += alpha;
                }
            }
        }
        alphas.push(alpha);
        planes.push(bits);
    }
    Ok(QuantSegment::new(alphas, planes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bit_hand_example() {
        let (a, b) = quantize_1bit(&[1.0, -2.0, 3.0], None).unwrap();
        assert_eq!(a, 2.0);
        assert_eq!(b.iter().collect::<Vec<_>>(), vec![true, false, true]);
    }

    #[test]
    fn one_bit_zero_vector() {
        let (a, b) = quantize_1bit(&[0.0, 0.0], None).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(b.count_ones(), 2);
    }

    #[test]
    fn one_bit_masked() {
        let mask = Bitset::from_fn(3, |j| j != 1);
        let (a, b) = quantize_1bit(&[1.0, -2.0, 3.0], Some(&mask)).unwrap();
        assert_eq!(a, 2.0);
        assert!(b.get(0) && b.get(2));
        // masked slot stored as +1
        assert!(b.get(1));
    }

    #[test]
    fn one_bit_errors() {
        assert!(matches!(quantize_1bit::<f64>(&[], None), Err(Error::Dimension(_))));
        let none = Bitset::zeros(2);
        assert!(matches!(quantize_1bit(&[1.0, 2.0], Some(&none)), Err(Error::Degenerate(_))));
        let short = Bitset::ones(1);
        assert!(matches!(quantize_1bit(&[1.0, 2.0], Some(&short)), Err(Error::Dimension(_))));
    }

    #[test]
    fn greedy_two_bit_hand_trace() {
        let seg = quantize_greedy(&[1.0f64, -2.0, 3.0], 2, None).unwrap();
        assert_eq!(seg.alphas()[0], 2.0);
        assert!((seg.alphas()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(seg.plane(0).iter().collect::<Vec<_>>(), vec![true, false, true]);
        assert_eq!(seg.plane(1).iter().collect::<Vec<_>>(), vec![false, true, true]);
    }

    #[test]
    fn greedy_constant_vector_is_exact() {
        let w: Vec<f64> = vec![0.7f64; 5];
        let seg = quantize_greedy(&w, 1, None).unwrap();
        assert_eq!(seg.alphas(), &[0.7]);
        assert_eq!(seg.sse(&w, None), 0.0);
    }

    #[test]
    fn greedy_k1_is_one_bit() {
        let w: Vec<f64> = vec![0.3, -1.2, 0.0, 4.5, -0.01];
        let seg = quantize_greedy(&w, 1, None).unwrap();
        let (a, b) = quantize_1bit(&w, None).unwrap();
        assert_eq!(seg.alphas(), &[a]);
        assert_eq!(seg.plane(0), &b);
    }

    #[test]
    fn bit_count_validated() {
        assert!(quantize_greedy(&[1.0], 0, None).is_err());
        assert!(quantize_greedy(&[1.0], 9, None).is_err());
    }
}
