use crate::bits::Bitset;
use crate::error::Result;
use crate::scalar::Scalar;

use super::binary::{check_bits, is_live, survivor_count};
use super::codebook::{build_codebook, nearest_code};
use super::refine::refine_alphas;
use super::{quantize_greedy, QuantSegment};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 50;

/// A quantized segment together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFit<T> {
    pub segment: QuantSegment<T>,
    /// Residual SSE over the unmasked positions.
    pub sse: T,
    /// Completed alternation steps (0 for non-alternating fits).
    pub iterations: usize,
    pub ridge_fallback: bool,
}

/// Greedy planes with jointly refitted scaling factors.
pub fn quantize_refined<T: Scalar>(w: &[T], k: usize, mask: Option<&Bitset>) -> Result<SegmentFit<T>> {
    let greedy = quantize_greedy(w, k, mask)?;
    let refined = refine_alphas(greedy.planes(), w, mask)?;
    let segment = greedy.with_alphas(refined.alphas);
    Ok(SegmentFit {
        sse: segment.sse(w, mask),
        segment,
        iterations: 0,
        ridge_fallback: refined.ridge_fallback,
    })
}

/// Alternates a codebook B-step and a least-squares alpha-step, starting from
/// the refined greedy solution.
///
/// Stops when the relative SSE improvement of a full step falls below `tol`
/// or after `max_iters` steps. A step that would raise the SSE (possible only
/// through rounding or the ridge fallback) is discarded. With one bit the
/// closed form is already optimal and is returned unchanged.
pub fn alternating_quantize<T: Scalar>(
    w: &[T],
    k: usize,
    mask: Option<&Bitset>,
    tol: f64,
    max_iters: usize,
) -> Result<SegmentFit<T>> {
    check_bits(k)?;
    survivor_count(w, mask)?;
    if k == 1 {
        let segment = quantize_greedy(w, 1, mask)?;
        return Ok(SegmentFit {
            sse: segment.sse(w, mask),
            segment,
            iterations: 0,
            ridge_fallback: false,
        });
    }

    let mut best = quantize_refined(w, k, mask)?;
    let tol = T::of(tol);
    for step in 1..=max_iters {
        let codebook = build_codebook(best.segment.alphas());
        let mut planes = vec![Bitset::ones(w.len()); k];
        for (j, &x) in w.iter().enumerate() {
            if !is_live(mask, j) {
                continue;
            }
            let code = codebook.codes()[nearest_code(&codebook, x)];
            for (i, plane) in planes.iter_mut().enumerate() {
                if code >> i & 1 == 0 {
                    plane.set(j, false);
                }
            }
        }
        let refined = refine_alphas(&planes, w, mask)?;
        let segment = QuantSegment::new(refined.alphas, planes);
        let sse = segment.sse(w, mask);
        if sse > best.sse {
            break;
        }
        let prev = best.sse;
        best = SegmentFit {
            segment,
            sse,
            iterations: step,
            ridge_fallback: best.ridge_fallback || refined.ridge_fallback,
        };
        if prev == T::zero() || (prev - sse) / prev < tol {
            break;
        }
    }
    Ok(best)
}
