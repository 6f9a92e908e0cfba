//! Sorted table of the `2^k` representable values of a k-bit segment.

use crate::scalar::Scalar;

/// All sums `sum_i (+/-) alpha_i`, sorted ascending.
///
/// Bit `i` of `codes[n]` is the sign used for `alpha_i` (set = `+1`).
/// Equal values keep lexicographic sign-pattern order, comparing `alpha_0`
/// first with `-1 < +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    values: Vec<T>,
    codes: Vec<u8>,
}

impl<T: Scalar> Codebook<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Value of a sign pattern, accumulated in plane order like dequantization.
#[inline]
pub(crate) fn code_value<T: Scalar>(alphas: &[T], code: u8) -> T {
    let mut v = T::zero();
    for (i, &a) in alphas.iter().enumerate() {
        if code >> i & 1 == 1 {
            v += a;
        } else {
            v -= a;
        }
    }
    v
}

pub fn build_codebook<T: Scalar>(alphas: &[T]) -> Codebook<T> {
    let k = alphas.len();
    assert!(k <= 8, "codebook supports at most 8 bits, got {k}");
    let mut entries: Vec<(T, u8)> = (0..1usize << k)
        .map(|p| {
            // pattern p in lexicographic order: alpha_0 is the most significant sign
            let code = (0..k).fold(0u8, |c, i| c | ((((p >> (k - 1 - i)) & 1) as u8) << i));
            (code_value(alphas, code), code)
        })
        .collect();
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite codebook values"));
    let (values, codes) = entries.into_iter().unzip();
    Codebook { values, codes }
}

/// Index of the codebook entry closest to `x`.
///
/// Binary search over the sorted values; an exact midpoint goes to the
/// smaller value and among equal values the first entry wins.
pub fn nearest_code<T: Scalar>(cb: &Codebook<T>, x: T) -> usize {
    let v = &cb.values;
    let hi = v.partition_point(|&c| c < x);
    if hi == 0 {
        return 0;
    }
    if hi == v.len() {
        return first_equal(v, hi - 1);
    }
    let lo = first_equal(v, hi - 1);
    if x - v[lo] <= v[hi] - x {
        lo
    } else {
        hi
    }
}

fn first_equal<T: Scalar>(v: &[T], mut i: usize) -> usize {
    while i > 0 && v[i - 1] == v[i] {
        i -= 1;
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(cb: &Codebook<f64>, x: f64) -> f64 {
        cb.values()[nearest_code(cb, x)]
    }

    #[test]
    fn refined_fixture_values() {
        let cb = build_codebook(&[2.25, 0.75]);
        assert_eq!(cb.values(), &[-3.0, -1.5, 1.5, 3.0]);
        assert_eq!(cb.codes(), &[0b00, 0b10, 0b01, 0b11]);
    }

    #[test]
    fn single_alpha() {
        let cb = build_codebook(&[1.0]);
        assert_eq!(cb.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn duplicate_values_have_fixed_order() {
        let cb = build_codebook(&[1.0, 1.0]);
        assert_eq!(cb.values(), &[-2.0, 0.0, 0.0, 2.0]);
        // (-, +) precedes (+, -)
        assert_eq!(cb.codes(), &[0b00, 0b10, 0b01, 0b11]);
        assert_eq!(nearest_code(&cb, 0.0), 1);
        assert_eq!(nearest_code(&cb, 0.2), 1);
        assert_eq!(nearest_code(&cb, -0.2), 1);
    }

    #[test]
    fn nearest_examples() {
        let cb = build_codebook(&[2.25, 0.75]);
        assert_eq!(value(&cb, 1.0), 1.5);
        assert_eq!(value(&cb, 10.0), 3.0);
        assert_eq!(value(&cb, -10.0), -3.0);
        assert_eq!(value(&cb, 0.0), -1.5);
        let unit = build_codebook(&[1.0]);
        assert_eq!(value(&unit, 0.0), -1.0);
    }

    #[test]
    fn negative_and_unordered_alphas() {
        let alphas = [-0.5, 2.0, 0.1];
        let cb = build_codebook(&alphas);
        assert!(cb.values().windows(2).all(|w| w[0] <= w[1]));
        let mut codes = cb.codes().to_vec();
        codes.sort();
        assert_eq!(codes, (0..8u8).collect::<Vec<_>>());
        for (&v, &c) in cb.values().iter().zip(cb.codes()) {
            assert_eq!(v, code_value(&alphas, c));
        }
    }

    proptest::proptest! {
        #[test]
        fn nearest_matches_linear_scan(
            alphas in proptest::collection::vec(-3.0f64..3.0, 1..5),
            x in -12.0f64..12.0,
        ) {
            let cb = build_codebook(&alphas);
            let got = cb.values()[nearest_code(&cb, x)];
            let best = cb.values().iter().map(|v| (x - v).abs()).fold(f64::INFINITY, f64::min);
            proptest::prop_assert_eq!((x - got).abs(), best);
        }
    }
}
