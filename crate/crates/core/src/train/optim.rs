//! Plain SGD with global-norm clipping, masked updates and a finite-difference
//! gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::prune::PruneMask;
use crate::scalar::Scalar;

use super::lstm::{backward, forward, Batch, LstmParams, LstmState};

/// Scales `grads` so their global L2 norm is at most `clip_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut LstmParams<T>, clip_norm: T) -> T {
    let norm = grads.squared_norm().sqrt();
    if norm > clip_norm && norm > T::zero() {
        let scale = clip_norm / norm;
        grads.for_each_mut(|_, m| m.as_mut_slice().iter_mut().for_each(|g| *g *= scale));
    }
    norm
}

/// Zeroes every pruned coordinate of the masked tensors.
pub fn apply_param_mask<T: Scalar>(params: &mut LstmParams<T>, mask: &PruneMask) {
    params.for_each_mut(|name, m| {
        if let Some(bits) = mask.bits(name) {
            for (j, v) in m.as_mut_slice().iter_mut().enumerate() {
                if !bits.get(j) {
                    *v = T::zero();
                }
            }
        }
    });
}

/// `params -= lr * clip(grads)`, then pruned coordinates are reset to zero.
/// Returns the gradient norm before clipping.
pub fn sgd_step<T: Scalar>(
    params: &mut LstmParams<T>,
    grads: &mut LstmParams<T>,
    lr: T,
    clip_norm: T,
    mask: Option<&PruneMask>,
) -> T {
    let norm = clip_gradients(grads, clip_norm);
    params.zip_mut(grads, |p, g| *p -= lr * g);
    if let Some(mask) = mask {
        apply_param_mask(params, mask);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor name, coordinates checked, worst relative error)`
    pub per_tensor: Vec<(String, usize, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_error < threshold
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares [`backward`] against central differences of [`forward`] on up to
/// `samples` randomly chosen coordinates of every tensor (all of them when a
/// tensor is smaller).
///
/// `corrupt` is applied to the analytic gradients before comparison; it exists
/// so the checker itself can be shown to catch a wrong gradient.
pub fn grad_check(
    params: &LstmParams<f64>,
    batch: &Batch,
    eps: f64,
    samples: usize,
    seed: u64,
    corrupt: Option<&dyn Fn(&mut LstmParams<f64>)>,
) -> Result<GradCheckReport> {
    let state = LstmState::zeros(params.layers.len(), batch.batch_size(), params.hidden);
    let (_, _, cache) = forward(params, batch, &state)?;
    let mut analytic = backward(params, &cache);
    if let Some(f) = corrupt {
        f(&mut analytic);
    }
    let mut grads = Vec::new();
    analytic.for_each(|name, m| grads.push((name.to_string(), m.as_slice().to_vec())));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loss_at = |p: &LstmParams<f64>| forward(p, batch, &state).map(|(l, _, _)| l);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_tensor: Vec::new(),
    };
    for (t, (name, g)) in grads.iter().enumerate() {
        let n = g.len();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            sample(&mut rng, n, samples).into_vec()
        };
        let mut worst = 0.0f64;
        for &j in &coords {
            let mut p = params.clone();
            let original = nth_tensor_value(&p, t, j);
            set_nth(&mut p, t, j, original + eps);
            let plus = loss_at(&p)?;
            set_nth(&mut p, t, j, original - eps);
            let minus = loss_at(&p)?;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(g[j], numeric));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_tensor.push((name.clone(), coords.len(), worst));
    }
    Ok(report)
}

fn nth_tensor_value(p: &LstmParams<f64>, t: usize, j: usize) -> f64 {
    let mut i = 0;
    let mut out = 0.0;
    p.for_each(|_, m| {
        if i == t {
            out = m.as_slice()[j];
        }
        i += 1;
    });
    out
}

fn set_nth(p: &mut LstmParams<f64>, t: usize, j: usize, v: f64) {
    let mut i = 0;
    p.for_each_mut(|_, m| {
        if i == t {
            m.as_mut_slice()[j] = v;
        }
        i += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bitset;
    use crate::prune::{PruneScope, TensorMask};
    use crate::tensor::DenseMatrix;
    use crate::train::lstm::init_params;

    fn tiny_batch() -> Batch {
        Batch {
            inputs: vec![vec![0, 3, 5, 1], vec![7, 2, 2, 9]],
            targets: vec![vec![3, 5, 1, 8], vec![2, 2, 9, 4]],
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = init_params::<f64>(10, 6, 2, None, 1.0, 11);
        let r = grad_check(&p, &tiny_batch(), 1e-5, 200, 5, None).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn embedding_gradients_match() {
        let p = init_params::<f64>(10, 5, 1, Some(4), 0.5, 12);
        let r = grad_check(&p, &tiny_batch(), 1e-6, 200, 2, None).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn checker_catches_corrupted_recurrent_gradient() {
        let p = init_params::<f64>(10, 6, 1, None, 0.5, 11);
        let corrupt = |g: &mut LstmParams<f64>| {
            for v in g.layers[0].w_h.as_mut_slice() {
                *v *= 1.1;
            }
        };
        let r = grad_check(&p, &tiny_batch(), 1e-5, 200, 1, Some(&corrupt)).unwrap();
        assert!(r.max_rel_error > 1e-2);
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let p = init_params::<f64>(10, 4, 1, None, 0.3, 4);
        let b = tiny_batch();
        let mut doubled = b.clone();
        doubled.inputs.extend(b.inputs.clone());
        doubled.targets.extend(b.targets.clone());
        let g1 = backward(&p, &forward(&p, &b, &LstmState::zeros(1, 2, 4)).unwrap().2);
        let g2 = backward(&p, &forward(&p, &doubled, &LstmState::zeros(1, 4, 4)).unwrap().2);
        let mut diff = g1.clone();
        diff.zip_mut(&g2, |a, b| *a -= b);
        assert!(diff.squared_norm().sqrt() < 1e-14);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = LstmParams::<f64>::zeros(3, 2, 1, None);
        g.b_out = DenseMatrix::new(1, 3, vec![6.0, 8.0, 0.0]).unwrap();
        let before = clip_gradients(&mut g, 5.0);
        assert_eq!(before, 10.0);
        assert!((g.squared_norm().sqrt() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = init_params::<f64>(5, 3, 1, None, 0.1, 1);
        let before = p.clone();
        let mut g = p.zeros_like();
        sgd_step(&mut p, &mut g, 1.0, 5.0, None);
        assert_eq!(p, before);
    }

    #[test]
    fn full_prune_mask_zeroes_params() {
        let mut p = init_params::<f64>(5, 3, 1, None, 0.1, 1);
        let mut tensors = Vec::new();
        p.for_each(|name, m| {
            tensors.push(TensorMask {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
                bits: Bitset::zeros(m.len()),
            })
        });
        let mask = PruneMask::new(tensors, 0.0, PruneScope::PerTensor).unwrap();
        let mut g = p.zeros_like();
        g.for_each_mut(|_, m| m.as_mut_slice().fill(0.25));
        for _ in 0..3 {
            sgd_step(&mut p, &mut g.clone(), 0.5, 5.0, Some(&mask));
            assert_eq!(p.squared_norm(), 0.0);
        }
    }
}
