//! Joint least-squares fit of the scaling factors for fixed bit planes.

use crate::bits::Bitset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::binary::{is_live, survivor_count};

/// Output of [`refine_alphas`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedAlphas<T> {
    pub alphas: Vec<T>,
    /// The Gram matrix was singular and a ridge term was added.
    pub ridge_fallback: bool,
}

/// Solves `min_alpha || w_s - B_s alpha ||^2` over the unmasked positions.
///
/// The normal equations `(B^T B) alpha = B^T w` are solved by an LDL^T
/// factorization. A singular Gram matrix (duplicate planes on small segments)
/// gets a ridge of `1e-10 * trace` on the diagonal instead of failing.
pub fn refine_alphas<T: Scalar>(planes: &[Bitset], w: &[T], mask: Option<&Bitset>) -> Result<RefinedAlphas<T>> {
    let k = planes.len();
    if k == 0 {
        return Err(Error::Dimension("no bit planes to refine".into()));
    }
    let live = survivor_count(w, mask)?;
    if live == 0 {
        return Err(Error::Degenerate("every position is masked".into()));
    }
    if let Some(p) = planes.iter().find(|p| p.len() != w.len()) {
        return Err(Error::Dimension(format!(
            "bit plane covers {} positions, vector has {}",
            p.len(),
            w.len()
        )));
    }

    let mut gram = vec![T::zero(); k * k];
    let mut rhs = vec![T::zero(); k];
    let mut signs = vec![false; k];
    for (j, &x) in w.iter().enumerate() {
        if !is_live(mask, j) {
            continue;
        }
        for (s, p) in signs.iter_mut().zip(planes) {
            *s = p.get(j);
        }
        for a in 0..k {
            if signs[a] {
                rhs[a] += x;
            } else {
                rhs[a] -= x;
            }
            for b in a..k {
                if signs[a] == signs[b] {
                    gram[a * k + b] += T::one();
                } else {
                    gram[a * k + b] -= T::one();
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[a * k + b] = gram[b * k + a];
        }
    }

    if let Some(alphas) = solve_ldlt(&gram, &rhs, k) {
        return Ok(RefinedAlphas {
            alphas,
            ridge_fallback: false,
        });
    }
    let trace: T = (0..k).map(|i| gram[i * k + i]).sum();
    let ridge = T::of(1e-10).max(T::epsilon() * T::of(16.0)) * trace;
    for i in 0..k {
        gram[i * k + i] += ridge;
    }
    let alphas = solve_ldlt(&gram, &rhs, k).ok_or_else(|| Error::Numerical {
        step: 0,
        detail: "ridge-regularized Gram matrix is still singular".into(),
    })?;
    Ok(RefinedAlphas {
        alphas,
        ridge_fallback: true,
    })
}

/// LDL^T solve of a symmetric positive definite system; `None` when a pivot
/// is not safely positive.
fn solve_ldlt<T: Scalar>(g: &[T], rhs: &[T], k: usize) -> Option<Vec<T>> {
    let trace: T = (0..k).map(|i| g[i * k + i]).sum();
    let tiny = T::epsilon() * T::of_usize(4 * k) * trace;
    let mut l = vec![T::zero(); k * k];
    let mut d = vec![T::zero(); k];
    for j in 0..k {
        let mut dj = g[j * k + j];
        for p in 0..j {
            dj -= l[j * k + p] * l[j * k + p] * d[p];
        }
        if !(dj > tiny) {
            return None;
        }
        d[j] = dj;
        for i in j + 1..k {
            let mut v = g[i * k + j];
            for p in 0..j {
                v -= l[i * k + p] * l[j * k + p] * d[p];
            }
            l[i * k + j] = v / dj;
        }
    }
    let mut y = rhs.to_vec();
    for i in 0..k {
        for p in 0..i {
            let t = l[i * k + p] * y[p];
            y[i] -= t;
        }
    }
    for i in 0..k {
        y[i] = y[i] / d[i];
    }
    for i in (0..k).rev() {
        for p in i + 1..k {
            let t = l[p * k + i] * y[p];
            y[i] -= t;
        }
    }
    y.iter().all(|v| v.is_finite()).then_some(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{quantize_1bit, quantize_greedy};

    #[test]
    fn two_by_two_hand_solution() {
        let w: Vec<f64> = vec![1.0, -2.0, 3.0];
        let seg = quantize_greedy(&w, 2, None).unwrap();
        let r = refine_alphas(seg.planes(), &w, None).unwrap();
        assert!(!r.ridge_fallback);
        assert!((r.alphas[0] - 2.25).abs() < 1e-14);
        assert!((r.alphas[1] - 0.75).abs() < 1e-14);
        let refined = seg.with_alphas(r.alphas);
        assert!((refined.sse(&w, None) - 0.5).abs() < 1e-14);
        assert!((seg.sse(&w, None) - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn one_plane_matches_closed_form_exactly() {
        let w: Vec<f64> = vec![0.31, -1.7, 0.0, 2.2, -0.05, 9.0, -3.3];
        let (a, b) = quantize_1bit(&w, None).unwrap();
        let r = refine_alphas(&[b], &w, None).unwrap();
        assert_eq!(r.alphas, vec![a]);
    }

    #[test]
    fn duplicate_planes_use_ridge() {
        let w: Vec<f64> = vec![1.0, -2.0, 3.0, 0.5];
        let (a, b) = quantize_1bit(&w, None).unwrap();
        let r = refine_alphas(&[b.clone(), b], &w, None).unwrap();
        assert!(r.ridge_fallback);
        assert!((r.alphas[0] + r.alphas[1] - a).abs() < 1e-6);
    }

    #[test]
    fn duplicate_planes_single_precision() {
        let w: Vec<f32> = vec![1.0f32, -2.0, 3.0, 0.5];
        let (a, b) = quantize_1bit(&w, None).unwrap();
        let r = refine_alphas(&[b.clone(), b], &w, None).unwrap();
        assert!(r.ridge_fallback);
        assert!((r.alphas[0] + r.alphas[1] - a).abs() < 1e-4);
    }

    #[test]
    fn masked_positions_ignored() {
        let w: Vec<f64> = vec![1.0, 100.0, 3.0];
        let mask = Bitset::from_fn(3, |j| j != 1);
        let (_, b) = quantize_1bit(&w, Some(&mask)).unwrap();
        let r = refine_alphas(&[b], &w, Some(&mask)).unwrap();
        assert_eq!(r.alphas, vec![2.0]);
    }

    #[test]
    fn plane_length_checked() {
        let w: Vec<f64> = vec![1.0, 2.0];
        assert!(matches!(refine_alphas(&[Bitset::ones(3)], &w, None), Err(Error::Dimension(_))));
    }
}
