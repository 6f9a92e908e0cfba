//! Brute-force oracle suites at tiny sizes, runnable from the command line.
//!
//! The implementations under test are passed in through [`Hooks`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bits::Bitset;
use crate::error::Result;
use crate::quant::{alternating_quantize, quantize_1bit, quantize_greedy, quantize_refined, QuantSegment};
use crate::train::{grad_check, init_params, Batch, LstmParams};

pub type OneBitFn = fn(&[f64], Option<&Bitset>) -> Result<(f64, Bitset)>;
pub type ClipFn = fn(&mut LstmParams<f64>, f64) -> f64;

/// Implementations exercised by the suites.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub one_bit: OneBitFn,
    pub clip: ClipFn,
}

impl Default for Hooks {
    fn default() -> Self {
        Self {
            one_bit: quantize_1bit::<f64>,
            clip: crate::train::clip_gradients::<f64>,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// SHA-256 of the 1-bit fits of the fixed golden inputs.
pub const GOLDEN_ONE_BIT_DIGEST: &str = "9a3e63768a29bfc5cee6f56ed9923d032c8afd511282670af94eecc599192cb3";

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> SuiteResult {
    let t = Instant::now();
    let (passed, detail) = f();
    SuiteResult {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Smallest SSE over every sign vector, each with its optimal scale.
pub fn exhaustive_one_bit_sse(w: &[f64]) -> f64 {
    let n = w.len();
    let norm2: f64 = w.iter().map(|x| x * x).sum();
    (0u32..1 << n)
        .map(|code| {
            let dot: f64 = w
                .iter()
                .enumerate()
                .map(|(j, x)| if code >> j & 1 == 1 { *x } else { -x })
                .sum();
            // best alpha = dot / n, residual = |w|^2 - dot^2 / n
            norm2 - dot * dot / n as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// SSE of the best `k`-plane fit over every sign matrix, each with its
/// least-squares scales.
pub fn exhaustive_multi_bit_sse(w: &[f64], k: usize) -> Result<f64> {
    let n = w.len();
    let combos = 1u64 << (n * k);
    let mut best = f64::INFINITY;
    for code in 0..combos {
        let planes: Vec<Bitset> = (0..k)
            .map(|i| Bitset::from_fn(n, |j| code >> (i * n + j) & 1 == 1))
            .collect();
        let fit = crate::quant::refine_alphas(&planes, w, None)?;
        let seg = QuantSegment::new(fit.alphas, planes);
        best = best.min(seg.sse(w, None));
    }
    Ok(best)
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.gen_range(0..8) {
            0 => 0.0,
            _ => rng.gen_range(-3.0..3.0),
        })
        .collect()
}

pub fn one_bit_optimality(hooks: &Hooks, cases: usize, seed: u64) -> SuiteResult {
    timed("one-bit optimality", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let n = rng.gen_range(1..=12);
            let w = random_vector(&mut rng, n);
            let (alpha, bits) = match (hooks.one_bit)(&w, None) {
                Ok(fit) => fit,
                Err(e) => return (false, format!("quantizer failed: {e}")),
            };
            let got = QuantSegment::new(vec![alpha], vec![bits]).sse(&w, None);
            worst = worst.max(got - exhaustive_one_bit_sse(&w));
        }
        (worst <= 1e-9, format!("{cases} vectors, worst excess SSE {worst:.3e}"))
    })
}

pub fn bstep_optimality(cases: usize, seed: u64) -> SuiteResult {
    timed("alternating dominance", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for case in 0..cases {
            let n = rng.gen_range(2..=6);
            let w = random_vector(&mut rng, n);
            let run = || -> Result<(f64, f64, f64, f64)> {
                let g = quantize_greedy(&w, 2, None)?.sse(&w, None);
                let r = quantize_refined(&w, 2, None)?.sse;
                let a = alternating_quantize(&w, 2, None, 1e-12, 100)?.sse;
                Ok((g, r, a, exhaustive_multi_bit_sse(&w, 2)?))
            };
            match run() {
                Ok((g, r, a, opt)) => {
                    if !(a <= r + 1e-12 && r <= g + 1e-12 && a >= opt - 1e-9) {
                        return (false, format!("case {case}: greedy {g} refined {r} alternating {a} optimum {opt}"));
                    }
                }
                Err(e) => return (false, format!("case {case}: {e}")),
            }
        }
        (true, format!("{cases} vectors"))
    })
}

pub fn gradient_check(seed: u64) -> SuiteResult {
    timed("gradient check", || {
        let p = init_params::<f64>(10, 6, 2, None, 1.0, seed);
        let batch = Batch {
            inputs: vec![vec![0, 3, 5, 1], vec![7, 2, 2, 9]],
            targets: vec![vec![3, 5, 1, 8], vec![2, 2, 9, 4]],
        };
        match grad_check(&p, &batch, 1e-5, 200, seed, None) {
            Ok(r) => (r.passes(1e-4), format!("max relative error {:.3e}", r.max_rel_error)),
            Err(e) => (false, e.to_string()),
        }
    })
}

pub fn clipping_invariant(hooks: &Hooks, cases: usize, seed: u64) -> SuiteResult {
    timed("clipping invariant", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for case in 0..cases {
            let mut g = LstmParams::<f64>::zeros(7, 3, 1, None);
            let scale = 10f64.powf(rng.gen_range(-2.0..3.0));
            g.for_each_mut(|_, m| {
                for v in m.as_mut_slice() {
                    *v = rng.gen_range(-scale..scale);
                }
            });
            let clip = rng.gen_range(0.1..10.0);
            (hooks.clip)(&mut g, clip);
            let norm = g.squared_norm().sqrt();
            if norm > clip + 1e-12 {
                return (false, format!("case {case}: norm {norm} after clipping to {clip}"));
            }
        }
        (true, format!("{cases} gradient sets"))
    })
}

/// Digest of the 1-bit fits of fixed inputs that contain exact zeros.
pub fn one_bit_digest(one_bit: OneBitFn) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut h = Sha256::new();
    for _ in 0..64 {
        let n = rng.gen_range(1..=40);
        let w = random_vector(&mut rng, n);
        let (alpha, bits) = one_bit(&w, None)?;
        h.update(alpha.to_bits().to_le_bytes());
        for word in bits.words() {
            h.update(word.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

pub fn golden_determinism(hooks: &Hooks) -> SuiteResult {
    timed("golden determinism", || match one_bit_digest(hooks.one_bit) {
        Ok(d) if d == GOLDEN_ONE_BIT_DIGEST => (true, "digest matches".into()),
        Ok(d) => (false, format!("digest {d} differs from the golden value")),
        Err(e) => (false, e.to_string()),
    })
}

/// Runs every suite.
pub fn run_selftest(hooks: &Hooks) -> Vec<SuiteResult> {
    vec![
        one_bit_optimality(hooks, 1000, 1),
        bstep_optimality(300, 2),
        gradient_check(5),
        clipping_invariant(hooks, 200, 4),
        golden_determinism(hooks),
    ]
}
