//! Multi-layer LSTM language model with exact backpropagation through time.
//!
//! Gate rows are ordered `[input, forget, cell candidate, output]`, each block
//! `hidden` rows tall. Layer 0 reads one-hot tokens, or an embedding column
//! when the model has an embedding matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

pub const EMBED: &str = "embed";
pub const OUT_W: &str = "out.w";
pub const OUT_B: &str = "out.b";

pub fn layer_name(layer: usize, part: &str) -> String {
    format!("lstm.{layer}.{part}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T> {
    /// `4h x input_dim`
    pub w_x: DenseMatrix<T>,
    /// `4h x h`
    pub w_h: DenseMatrix<T>,
    /// `1 x 4h`
    pub bias: DenseMatrix<T>,
}

/// Model parameters. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub vocab: usize,
    pub hidden: usize,
    /// `embed_dim x V`, absent for one-hot input.
    pub embed: Option<DenseMatrix<T>>,
    pub layers: Vec<LstmLayer<T>>,
    /// `V x h`
    pub w_out: DenseMatrix<T>,
    /// `1 x V`
    pub b_out: DenseMatrix<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(vocab: usize, hidden: usize, layers: usize, embed_dim: Option<usize>) -> Self {
        let input0 = embed_dim.unwrap_or(vocab);
        Self {
            vocab,
            hidden,
            embed: embed_dim.map(|e| DenseMatrix::zeros(e, vocab)),
            layers: (0..layers)
                .map(|l| LstmLayer {
                    w_x: DenseMatrix::zeros(4 * hidden, if l == 0 { input0 } else { hidden }),
                    w_h: DenseMatrix::zeros(4 * hidden, hidden),
                    bias: DenseMatrix::zeros(1, 4 * hidden),
                })
                .collect(),
            w_out: DenseMatrix::zeros(vocab, hidden),
            b_out: DenseMatrix::zeros(1, vocab),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.vocab,
            self.hidden,
            self.layers.len(),
            self.embed.as_ref().map(DenseMatrix::rows),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.embed.as_ref().map_or(self.vocab, DenseMatrix::rows)
    }

    /// Visits every tensor with its bundle name, in a fixed order.
    pub fn for_each(&self, mut f: impl FnMut(&str, &DenseMatrix<T>)) {
        if let Some(e) = &self.embed {
            f(EMBED, e);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            f(&layer_name(l, "w_x"), &layer.w_x);
            f(&layer_name(l, "w_h"), &layer.w_h);
            f(&layer_name(l, "bias"), &layer.bias);
        }
        f(OUT_W, &self.w_out);
        f(OUT_B, &self.b_out);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut DenseMatrix<T>)) {
        if let Some(e) = &mut self.embed {
            f(EMBED, e);
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(&layer_name(l, "w_x"), &mut layer.w_x);
            f(&layer_name(l, "w_h"), &mut layer.w_h);
            f(&layer_name(l, "bias"), &mut layer.bias);
        }
        f(OUT_W, &mut self.w_out);
        f(OUT_B, &mut self.b_out);
    }

    /// Element-wise combination with a same-shaped parameter set.
    pub fn zip_mut(&mut self, other: &Self, f: impl Fn(&mut T, T)) {
        let mut others = Vec::new();
        other.for_each(|_, m| others.push(m.as_slice().to_vec()));
        let mut it = others.into_iter();
        self.for_each_mut(|_, m| {
            let o = it.next().expect("same parameter layout");
            for (a, &b) in m.as_mut_slice().iter_mut().zip(&o) {
                f(a, b);
            }
        });
    }

    pub fn squared_norm(&self) -> T {
        let mut s = T::zero();
        self.for_each(|_, m| s += m.squared_norm());
        s
    }

    pub fn is_all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, m| ok &= m.is_all_finite());
        ok
    }

    pub fn to_bundle(&self) -> ModelBundle<T> {
        let mut b = ModelBundle::new();
        self.for_each(|n, m| b.push(n, m.clone()).expect("parameter names are unique"));
        b.metadata.insert("model".into(), "char-lstm".into());
        b.metadata.insert("vocab".into(), self.vocab.to_string());
        b.metadata.insert("hidden".into(), self.hidden.to_string());
        b.metadata.insert("layers".into(), self.layers.len().to_string());
        b
    }

    /// Rebuilds parameters from a bundle produced by [`to_bundle`](Self::to_bundle).
    pub fn from_bundle(bundle: &ModelBundle<T>) -> Result<Self> {
        let get = |name: &str| {
            bundle
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("bundle lacks tensor {name:?}")))
        };
        let w_out = get(OUT_W)?;
        let (vocab, hidden) = w_out.shape();
        let mut layers = Vec::new();
        while bundle.get(&layer_name(layers.len(), "w_x")).is_some() {
            let l = layers.len();
            layers.push(LstmLayer {
                w_x: get(&layer_name(l, "w_x"))?,
                w_h: get(&layer_name(l, "w_h"))?,
                bias: get(&layer_name(l, "bias"))?,
            });
        }
        if layers.is_empty() {
            return Err(Error::Validation("bundle has no LSTM layers".into()));
        }
        let embed = bundle.get(EMBED).cloned();
        let params = Self {
            vocab,
            hidden,
            embed,
            layers,
            w_out,
            b_out: get(OUT_B)?,
        };
        let reference = params.zeros_like();
        let mut shapes = Vec::new();
        reference.for_each(|n, m| shapes.push((n.to_string(), m.shape())));
        let mut i = 0;
        let mut bad = None;
        params.for_each(|n, m| {
            if m.shape() != shapes[i].1 && bad.is_none() {
                bad = Some(format!("{n}: {:?}, expected {:?}", m.shape(), shapes[i].1));
            }
            i += 1;
        });
        match bad {
            Some(msg) => Err(Error::Dimension(msg)),
            None => Ok(params),
        }
    }
}

/// Uniform `[-scale, scale]` weights from a seeded generator; biases zero
/// except the forget gate, which starts at 1.
pub fn init_params<T: Scalar>(
    vocab: usize,
    hidden: usize,
    layers: usize,
    embed_dim: Option<usize>,
    scale: f64,
    seed: u64,
) -> LstmParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LstmParams::zeros(vocab, hidden, layers, embed_dim);
    p.for_each_mut(|name, m| {
        if name.ends_with("bias") || name == OUT_B {
            return;
        }
        for v in m.as_mut_slice() {
            *v = T::of(rng.gen_range(-scale..=scale));
        }
    });
    for layer in &mut p.layers {
        for v in &mut layer.bias.as_mut_slice()[hidden..2 * hidden] {
            *v = T::one();
        }
    }
    p
}

/// Recurrent state per layer, each `batch x hidden` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<Vec<T>>,
    pub c: Vec<Vec<T>>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        Self {
            h: vec![vec![T::zero(); batch * hidden]; layers],
            c: vec![vec![T::zero(); batch * hidden]; layers],
        }
    }
}

/// `batch` token windows with their next-token targets, `inputs[b][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    pub fn steps(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone)]
struct LayerStep<T> {
    /// Dense layer input, `batch x in`; empty when the input is one-hot.
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    o: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: Batch,
    steps: Vec<Vec<LayerStep<T>>>,
    probs: Vec<Vec<T>>,
    nll: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Mean NLL of each sequence in the batch.
    pub fn sequence_losses(&self) -> Vec<T> {
        let steps = T::of_usize(self.batch.steps());
        (0..self.batch.batch_size())
            .map(|b| self.nll.iter().map(|row| row[b]).sum::<T>() / steps)
            .collect()
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// out += M x
fn matvec_acc<T: Scalar>(m: &DenseMatrix<T>, x: &[T], out: &mut [T]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = m.row(r);
        let mut s = T::zero();
        for (a, b) in row.iter().zip(x) {
            s += *a * *b;
        }
        *o += s;
    }
}

/// out += M^T d
fn matvec_t_acc<T: Scalar>(m: &DenseMatrix<T>, d: &[T], out: &mut [T]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == T::zero() {
            continue;
        }
        for (o, a) in out.iter_mut().zip(m.row(r)) {
            *o += *a * dr;
        }
    }
}

/// G += d x^T
fn outer_acc<T: Scalar>(g: &mut DenseMatrix<T>, d: &[T], x: &[T]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == T::zero() {
            continue;
        }
        for (gv, &xv) in g.row_mut(r).iter_mut().zip(x) {
            *gv += dr * xv;
        }
    }
}

/// One LSTM cell update for a single sequence. Returns `(i, f, g, o, c, tanh_c, h)`
/// written into the given slices.
#[allow(clippy::too_many_arguments)]
fn cell<T: Scalar>(
    layer: &LstmLayer<T>,
    hidden: usize,
    input: CellInput<'_, T>,
    h_prev: &[T],
    c_prev: &[T],
    gates: &mut [T],
    c: &mut [T],
    tanh_c: &mut [T],
    h: &mut [T],
) {
    gates.copy_from_slice(layer.bias.as_slice());
    match input {
        CellInput::Token(tok) => {
            let cols = layer.w_x.cols();
            let wx = layer.w_x.as_slice();
            for (r, z) in gates.iter_mut().enumerate() {
                *z += wx[r * cols + tok];
            }
        }
        CellInput::Dense(x) => matvec_acc(&layer.w_x, x, gates),
    }
    matvec_acc(&layer.w_h, h_prev, gates);
    for u in 0..hidden {
        let i = sigmoid(gates[u]);
        let f = sigmoid(gates[hidden + u]);
        let g = gates[2 * hidden + u].tanh();
        let o = sigmoid(gates[3 * hidden + u]);
        gates[u] = i;
        gates[hidden + u] = f;
        gates[2 * hidden + u] = g;
        gates[3 * hidden + u] = o;
        c[u] = f * c_prev[u] + i * g;
        tanh_c[u] = c[u].tanh();
        h[u] = o * tanh_c[u];
    }
}

#[derive(Clone, Copy)]
enum CellInput<'a, T> {
    Token(usize),
    Dense(&'a [T]),
}

/// Softmax of `W_out h + b_out` into `probs`.
fn output_probs<T: Scalar>(p: &LstmParams<T>, h: &[T], probs: &mut [T]) {
    probs.copy_from_slice(p.b_out.as_slice());
    matvec_acc(&p.w_out, h, probs);
    let max = probs.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in probs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in probs.iter_mut() {
        *v = *v / sum;
    }
}

/// Runs the model over a batch of windows.
///
/// Returns the mean NLL (nats) over `batch x steps`, the state after the last
/// step, and the cache needed by [`backward`].
pub fn forward<T: Scalar>(
    p: &LstmParams<T>,
    batch: &Batch,
    state: &LstmState<T>,
) -> Result<(T, LstmState<T>, ForwardCache<T>)> {
    let bsz = batch.batch_size();
    let steps = batch.steps();
    let hd = p.hidden;
    let nl = p.layers.len();
    let v = p.vocab;
    let in_dim = p.input_dim();
    check_batch(p, batch)?;

    let mut cur = state.clone();
    let mut cache = ForwardCache {
        batch: batch.clone(),
        steps: Vec::with_capacity(steps),
        probs: Vec::with_capacity(steps),
        nll: Vec::with_capacity(steps),
    };
    let mut gates = vec![T::zero(); 4 * hd];
    let mut total = T::zero();
    for t in 0..steps {
        let mut layer_steps: Vec<LayerStep<T>> = Vec::with_capacity(nl);
        for (l, layer) in p.layers.iter().enumerate() {
            let x: Vec<T> = if l > 0 {
                layer_steps[l - 1].h.clone()
            } else if let Some(e) = &p.embed {
                let mut x = vec![T::zero(); bsz * in_dim];
                for b in 0..bsz {
                    let tok = batch.inputs[b][t];
                    for d in 0..in_dim {
                        x[b * in_dim + d] = e.get(d, tok);
                    }
                }
                x
            } else {
                Vec::new()
            };
            let xd = if l == 0 { in_dim } else { hd };
            let mut st = LayerStep {
                h_prev: cur.h[l].clone(),
                c_prev: cur.c[l].clone(),
                i: vec![T::zero(); bsz * hd],
                f: vec![T::zero(); bsz * hd],
                g: vec![T::zero(); bsz * hd],
                o: vec![T::zero(); bsz * hd],
                tanh_c: vec![T::zero(); bsz * hd],
                h: vec![T::zero(); bsz * hd],
                x,
            };
            let mut c_new = vec![T::zero(); bsz * hd];
            for b in 0..bsz {
                let r = b * hd..(b + 1) * hd;
                let input = if st.x.is_empty() {
                    CellInput::Token(batch.inputs[b][t])
                } else {
                    CellInput::Dense(&st.x[b * xd..(b + 1) * xd])
                };
                cell(
                    layer,
                    hd,
                    input,
                    &st.h_prev[r.clone()],
                    &st.c_prev[r.clone()],
                    &mut gates,
                    &mut c_new[r.clone()],
                    &mut st.tanh_c[r.clone()],
                    &mut st.h[r.clone()],
                );
                st.i[r.clone()].copy_from_slice(&gates[..hd]);
                st.f[r.clone()].copy_from_slice(&gates[hd..2 * hd]);
                st.g[r.clone()].copy_from_slice(&gates[2 * hd..3 * hd]);
                st.o[r].copy_from_slice(&gates[3 * hd..]);
            }
            cur.h[l] = st.h.clone();
            cur.c[l] = c_new;
            layer_steps.push(st);
        }
        let top = &layer_steps[nl - 1].h;
        let mut probs = vec![T::zero(); bsz * v];
        let mut nll = vec![T::zero(); bsz];
        for b in 0..bsz {
            let pr = &mut probs[b * v..(b + 1) * v];
            output_probs(p, &top[b * hd..(b + 1) * hd], pr);
            nll[b] = -pr[batch.targets[b][t]].ln();
            total += nll[b];
        }
        if !total.is_finite() {
            return Err(Error::Numerical {
                step: t,
                detail: "non-finite loss in forward pass".into(),
            });
        }
        cache.steps.push(layer_steps);
        cache.probs.push(probs);
        cache.nll.push(nll);
    }
    let loss = total / T::of_usize(bsz * steps);
    Ok((loss, cur, cache))
}

fn check_batch<T: Scalar>(p: &LstmParams<T>, batch: &Batch) -> Result<()> {
    let steps = batch.steps();
    if batch.batch_size() == 0 || steps == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    if batch.targets.len() != batch.batch_size() {
        return Err(Error::Dimension("inputs and targets differ in batch size".into()));
    }
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        if x.len() != steps || y.len() != steps {
            return Err(Error::Dimension("ragged batch windows".into()));
        }
        if x.iter().chain(y).any(|&tok| tok >= p.vocab) {
            return Err(Error::Validation(format!("token id outside vocabulary of {}", p.vocab)));
        }
    }
    Ok(())
}

/// Exact gradient of the mean NLL of the cached forward pass. The incoming
/// state is treated as a constant (truncated BPTT).
pub fn backward<T: Scalar>(p: &LstmParams<T>, cache: &ForwardCache<T>) -> LstmParams<T> {
    let batch = &cache.batch;
    let bsz = batch.batch_size();
    let steps = batch.steps();
    let hd = p.hidden;
    let nl = p.layers.len();
    let v = p.vocab;
    let in_dim = p.input_dim();
    let scale = T::one() / T::of_usize(bsz * steps);

    let mut grads = p.zeros_like();
    let mut dh_next = vec![vec![T::zero(); bsz * hd]; nl];
    let mut dc_next = vec![vec![T::zero(); bsz * hd]; nl];
    let mut dz = vec![T::zero(); 4 * hd];
    let mut dlogits = vec![T::zero(); v];

    for t in (0..steps).rev() {
        let layer_steps = &cache.steps[t];
        // gradient flowing into the top layer's h at time t
        let mut dh_in = vec![T::zero(); bsz * hd];
        let top = &layer_steps[nl - 1].h;
        for b in 0..bsz {
            dlogits.copy_from_slice(&cache.probs[t][b * v..(b + 1) * v]);
            dlogits[batch.targets[b][t]] -= T::one();
            for d in dlogits.iter_mut() {
                *d *= scale;
            }
            let hb = &top[b * hd..(b + 1) * hd];
            outer_acc(&mut grads.w_out, &dlogits, hb);
            for (g, &d) in grads.b_out.as_mut_slice().iter_mut().zip(&dlogits) {
                *g += d;
            }
            matvec_t_acc(&p.w_out, &dlogits, &mut dh_in[b * hd..(b + 1) * hd]);
        }

        for l in (0..nl).rev() {
            let st = &layer_steps[l];
            let layer = &p.layers[l];
            let xd = if l == 0 { in_dim } else { hd };
            let mut dx = vec![T::zero(); if l > 0 || p.embed.is_some() { bsz * xd } else { 0 }];
            let mut dh_prev = vec![T::zero(); bsz * hd];
            let mut dc_prev = vec![T::zero(); bsz * hd];
            for b in 0..bsz {
                let off = b * hd;
                for u in 0..hd {
                    let k = off + u;
                    let dh = dh_in[k] + dh_next[l][k];
                    let (i, f, g, o, tc) = (st.i[k], st.f[k], st.g[k], st.o[k], st.tanh_c[k]);
                    let dc = dc_next[l][k] + dh * o * (T::one() - tc * tc);
                    dz[u] = dc * g * i * (T::one() - i);
                    dz[hd + u] = dc * st.c_prev[k] * f * (T::one() - f);
                    dz[2 * hd + u] = dc * i * (T::one() - g * g);
                    dz[3 * hd + u] = dh * tc * o * (T::one() - o);
                    dc_prev[k] = dc * f;
                }
                let lg = &mut grads.layers[l];
                if st.x.is_empty() {
                    let tok = batch.inputs[b][t];
                    let cols = lg.w_x.cols();
                    let gx = lg.w_x.as_mut_slice();
                    for (r, &d) in dz.iter().enumerate() {
                        gx[r * cols + tok] += d;
                    }
                } else {
                    outer_acc(&mut lg.w_x, &dz, &st.x[b * xd..(b + 1) * xd]);
                    matvec_t_acc(&layer.w_x, &dz, &mut dx[b * xd..(b + 1) * xd]);
                }
                outer_acc(&mut lg.w_h, &dz, &st.h_prev[off..off + hd]);
                for (gb, &d) in lg.bias.as_mut_slice().iter_mut().zip(dz.iter()) {
                    *gb += d;
                }
                matvec_t_acc(&layer.w_h, &dz, &mut dh_prev[off..off + hd]);
            }
            dh_next[l] = dh_prev;
            dc_next[l] = dc_prev;
            if l > 0 {
                dh_in = dx;
            } else if let Some(ge) = &mut grads.embed {
                for b in 0..bsz {
                    let tok = batch.inputs[b][t];
                    for d in 0..in_dim {
                        let cur = ge.get(d, tok);
                        ge.set(d, tok, cur + dx[b * in_dim + d]);
                    }
                }
            }
        }
    }
    grads
}

/// Sum of NLL over a token stream with batch size 1, carrying state across
/// the whole stream. Returns `(total_nll, predictions)`.
pub fn sequence_nll<T: Scalar>(p: &LstmParams<T>, tokens: &[usize]) -> Result<(T, usize)> {
    if tokens.len() < 2 {
        return Ok((T::zero(), 0));
    }
    let hd = p.hidden;
    let nl = p.layers.len();
    let in_dim = p.input_dim();
    let mut h = vec![vec![T::zero(); hd]; nl];
    let mut c = vec![vec![T::zero(); hd]; nl];
    let mut gates = vec![T::zero(); 4 * hd];
    let mut probs = vec![T::zero(); p.vocab];
    let mut x = vec![T::zero(); in_dim.max(hd)];
    let (mut h_new, mut c_new, mut tanh_c) = (vec![T::zero(); hd], vec![T::zero(); hd], vec![T::zero(); hd]);
    let mut total = T::zero();
    for (t, w) in tokens.windows(2).enumerate() {
        let (tok, target) = (w[0], w[1]);
        if tok >= p.vocab || target >= p.vocab {
            return Err(Error::Validation(format!("token id outside vocabulary of {}", p.vocab)));
        }
        for (l, layer) in p.layers.iter().enumerate() {
            let input = if l > 0 {
                x[..hd].copy_from_slice(&h[l - 1]);
                CellInput::Dense(&x[..hd])
            } else if let Some(e) = &p.embed {
                for d in 0..in_dim {
                    x[d] = e.get(d, tok);
                }
                CellInput::Dense(&x[..in_dim])
            } else {
                CellInput::Token(tok)
            };
            cell(layer, hd, input, &h[l], &c[l], &mut gates, &mut c_new, &mut tanh_c, &mut h_new);
            h[l].copy_from_slice(&h_new);
            c[l].copy_from_slice(&c_new);
        }
        output_probs(p, &h[nl - 1], &mut probs);
        total += -probs[target].ln();
        if !total.is_finite() {
            return Err(Error::Numerical {
                step: t,
                detail: "non-finite loss during evaluation".into(),
            });
        }
    }
    Ok((total, tokens.len() - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(inputs: Vec<Vec<usize>>, targets: Vec<Vec<usize>>) -> Batch {
        Batch { inputs, targets }
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let p = LstmParams::<f64>::zeros(7, 4, 2, None);
        let b = batch(vec![vec![0, 3, 5], vec![6, 6, 1]], vec![vec![3, 5, 2], vec![6, 1, 0]]);
        let (loss, _, _) = forward(&p, &b, &LstmState::zeros(2, 2, 4)).unwrap();
        assert!((loss - (7f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_sequences_identical_losses() {
        let p = init_params::<f64>(5, 3, 1, None, 0.5, 3);
        let seq = vec![1, 4, 2, 0];
        let tgt = vec![4, 2, 0, 3];
        let b = batch(vec![seq.clone(); 3], vec![tgt.clone(); 3]);
        let (_, _, cache) = forward(&p, &b, &LstmState::zeros(1, 3, 3)).unwrap();
        let l = cache.sequence_losses();
        assert_eq!(l[0], l[1]);
        assert_eq!(l[1], l[2]);
    }

    #[test]
    fn single_step_hand_computation() {
        // h = 2, V = 3, one-hot input, one layer
        let mut p = LstmParams::<f64>::zeros(3, 2, 1, None);
        let wx = [0.1, -0.2, 0.3, 0.4, 0.0, 0.5, -0.3, 0.2, 0.1, 0.6, -0.1, 0.2, 0.3, 0.3, -0.4, 0.7, 0.2, 0.0, -0.5, 0.1, 0.4, 0.2, -0.2, 0.3];
        p.layers[0].w_x = DenseMatrix::new(8, 3, wx.to_vec()).unwrap();
        p.layers[0].bias = DenseMatrix::new(1, 8, vec![0.0, 0.1, 1.0, 1.0, 0.0, -0.1, 0.2, 0.0]).unwrap();
        p.w_out = DenseMatrix::new(3, 2, vec![1.0, -1.0, 0.5, 0.5, -2.0, 0.3]).unwrap();
        p.b_out = DenseMatrix::new(1, 3, vec![0.1, 0.0, -0.1]).unwrap();
        let tok = 1;
        let target = 2;

        // scalar evaluation; h_prev = c_prev = 0 so W_h does not contribute
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let z = |row: usize| wx[row * 3 + tok] + p.layers[0].bias.as_slice()[row];
        let mut h = [0.0; 2];
        for u in 0..2 {
            let i = sig(z(u));
            let g = z(4 + u).tanh();
            let o = sig(z(6 + u));
            let c = i * g;
            h[u] = o * c.tanh();
        }
        let logits: Vec<f64> = (0..3)
            .map(|r| p.w_out.get(r, 0) * h[0] + p.w_out.get(r, 1) * h[1] + p.b_out.as_slice()[r])
            .collect();
        let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        let expected = lse - logits[target];

        let b = batch(vec![vec![tok]], vec![vec![target]]);
        let (loss, _, _) = forward(&p, &b, &LstmState::zeros(1, 1, 2)).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let p = init_params::<f64>(11, 6, 2, None, 0.1, 1);
        for layer in &p.layers {
            let b = layer.bias.as_slice();
            assert!(b[6..12].iter().all(|&v| v == 1.0));
            assert!(b[..6].iter().chain(&b[12..]).all(|&v| v == 0.0));
        }
        assert!(p.layers[0].w_x.as_slice().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params::<f64>(9, 5, 1, Some(4), 0.1, 42);
        assert_eq!(a, init_params::<f64>(9, 5, 1, Some(4), 0.1, 42));
        assert_ne!(a, init_params::<f64>(9, 5, 1, Some(4), 0.1, 43));
    }

    #[test]
    fn bundle_round_trip() {
        let a = init_params::<f64>(9, 5, 2, Some(4), 0.1, 42);
        let b = LstmParams::from_bundle(&a.to_bundle()).unwrap();
        assert_eq!(a, b);
        let mut broken = a.to_bundle();
        broken.replace(OUT_B, DenseMatrix::zeros(1, 9)).unwrap();
        assert!(LstmParams::from_bundle(&broken).is_ok());
    }

    #[test]
    fn sequence_nll_matches_forward() {
        let p = init_params::<f64>(6, 4, 2, Some(3), 0.4, 8);
        let tokens = [0, 3, 5, 1, 1, 2, 4, 0];
        let (total, n) = sequence_nll(&p, &tokens).unwrap();
        let b = batch(vec![tokens[..7].to_vec()], vec![tokens[1..].to_vec()]);
        let (loss, _, _) = forward(&p, &b, &LstmState::zeros(2, 1, 4)).unwrap();
        assert!((total / n as f64 - loss).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocab_rejected() {
        let p = LstmParams::<f64>::zeros(3, 2, 1, None);
        let b = batch(vec![vec![3]], vec![vec![0]]);
        assert!(matches!(forward(&p, &b, &LstmState::zeros(1, 1, 2)), Err(Error::Validation(_))));
    }

    #[test]
    fn non_finite_loss_reports_step() {
        let mut p = LstmParams::<f64>::zeros(3, 2, 1, None);
        p.b_out = DenseMatrix::new(1, 3, vec![0.0, 800.0, -800.0]).unwrap();
        let b = batch(vec![vec![0, 0]], vec![vec![1, 2]]);
        match forward(&p, &b, &LstmState::zeros(1, 1, 2)) {
            Err(Error::Numerical { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }
}
