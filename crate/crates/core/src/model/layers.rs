//! Forward and backward passes of the building blocks, over packed token
//! matrices (one row per token of the batch).

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::Rng;

use super::params::{Attention, FeedForward, LayerNorm, Linear};
use super::Scalar;

const NORM_EPS: f64 = 1e-5;

pub(crate) fn linear<F: Scalar>(l: &Linear<F>, x: &Array2<F>) -> Array2<F> {
    let mut y = x.dot(&l.weight);
    y += &l.bias;
    y
}

/// Accumulates weight and bias gradients into `g` and returns `dL/dx`.
pub(crate) fn linear_backward<F: Scalar>(
    l: &Linear<F>,
    x: &Array2<F>,
    dy: &Array2<F>,
    g: &mut Linear<F>,
) -> Array2<F> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), &mut g.weight);
    g.bias += &dy.sum_axis(Axis(0));
    dy.dot(&l.weight.t())
}

pub(crate) struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Vec<F>,
}

fn normalize<F: Scalar>(x: &Array2<F>) -> (Array2<F>, Vec<F>) {
    let d = x.ncols();
    let inv_d = F::one() / F::from_usize(d).unwrap();
    let eps = F::from_f64_lossy(NORM_EPS);
    let mut xhat = x.clone();
    let mut rstds = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let row = row.as_slice_mut().expect("contiguous row");
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rstd = F::one() / (var + eps).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * rstd);
        rstds.push(rstd);
    }
    (xhat, rstds)
}

pub(crate) fn norm<F: Scalar>(n: &LayerNorm<F>, x: &Array2<F>) -> Array2<F> {
    let (mut y, _) = normalize(x);
    y *= &n.gain;
    y += &n.bias;
    y
}

pub(crate) fn norm_forward<F: Scalar>(n: &LayerNorm<F>, x: &Array2<F>) -> (Array2<F>, NormCache<F>) {
    let (xhat, rstd) = normalize(x);
    let mut y = &xhat * &n.gain;
    y += &n.bias;
    (y, NormCache { xhat, rstd })
}

pub(crate) fn norm_backward<F: Scalar>(
    n: &LayerNorm<F>,
    cache: &NormCache<F>,
    dy: &Array2<F>,
    g: &mut LayerNorm<F>,
) -> Array2<F> {
    g.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0));
    let d = dy.ncols();
    let inv_d = F::one() / F::from_usize(d).unwrap();
    let gain = n.gain.as_slice().expect("contiguous");
    let mut dx = Array2::zeros(dy.raw_dim());
    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
        let out = out.as_slice_mut().expect("contiguous row");
        let dyr = dy.row(r);
        let xr = cache.xhat.row(r);
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_x = F::zero();
        for c in 0..d {
            let dxhat = dyr[c] * gain[c];
            out[c] = dxhat;
            mean_dxhat += dxhat;
            mean_dxhat_x += dxhat * xr[c];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_x *= inv_d;
        let rstd = cache.rstd[r];
        for c in 0..d {
            out[c] = rstd * (out[c] - mean_dxhat - xr[c] * mean_dxhat_x);
        }
    }
    dx
}

/// Row ranges of the sequences packed in a token matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Spans {
    offsets: Vec<usize>,
}

impl Spans {
    pub(crate) fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for len in lengths {
            offsets.push(offsets.last().unwrap() + len);
        }
        Spans { offsets }
    }

    pub(crate) fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub(crate) fn range(&self, i: usize) -> (usize, usize) {
        (self.offsets[i], self.offsets[i + 1])
    }
}

pub(crate) struct AttentionCache<F> {
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Row-major `Tq x Tk` probabilities, one block per (sequence, head).
    probs: Vec<Vec<F>>,
    context: Array2<F>,
}

/// Scaled dot-product attention of one (sequence, head) block.
/// Writes the context rows and returns the probabilities.
#[allow(clippy::too_many_arguments)]
fn attend_block<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    ctx: &mut [F],
    d: usize,
    col: usize,
    dh: usize,
    (qs, qe): (usize, usize),
    (ks, ke): (usize, usize),
    causal: bool,
    scale: F,
) -> Vec<F> {
    let tq = qe - qs;
    let tk = ke - ks;
    let mut p = vec![F::zero(); tq * tk];
    for i in 0..tq {
        let qi = &q[(qs + i) * d + col..(qs + i) * d + col + dh];
        let visible = if causal { (i + 1).min(tk) } else { tk };
        let row = &mut p[i * tk..(i + 1) * tk];
        let mut max = F::neg_infinity();
        for j in 0..visible {
            let kj = &k[(ks + j) * d + col..(ks + j) * d + col + dh];
            let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<F>() * scale;
            row[j] = s;
            if s > max {
                max = s;
            }
        }
        let mut total = F::zero();
        for x in row[..visible].iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row[..visible].iter_mut() {
            *x /= total;
        }
        let out = &mut ctx[(qs + i) * d + col..(qs + i) * d + col + dh];
        for j in 0..visible {
            let pj = row[j];
            let vj = &v[(ks + j) * d + col..(ks + j) * d + col + dh];
            for (o, &x) in out.iter_mut().zip(vj) {
                *o += pj * x;
            }
        }
    }
    p
}

fn contiguous<F>(a: &Array2<F>) -> &[F] {
    a.as_slice().expect("standard layout")
}

/// Multi-head attention of `xq` over `xkv`. Sequence `b` of the queries
/// attends to sequence `b` of the keys only; with `causal`, query `i`
/// sees keys `0..=i`.
pub(crate) fn attention_forward<F: Scalar>(
    a: &Attention<F>,
    xq: &Array2<F>,
    xkv: &Array2<F>,
    q_spans: &Spans,
    k_spans: &Spans,
    heads: usize,
    causal: bool,
) -> (Array2<F>, AttentionCache<F>) {
    let q = linear(&a.query, xq);
    let k = linear(&a.key, xkv);
    let v = linear(&a.value, xkv);
    let d = q.ncols();
    let dh = d / heads;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let mut context = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(q_spans.len() * heads);
    {
        let ctx = context.as_slice_mut().expect("standard layout");
        for b in 0..q_spans.len() {
            for h in 0..heads {
                probs.push(attend_block(
                    contiguous(&q),
                    contiguous(&k),
                    contiguous(&v),
                    ctx,
                    d,
                    h * dh,
                    dh,
                    q_spans.range(b),
                    k_spans.range(b),
                    causal,
                    scale,
                ));
            }
        }
    }
    let out = linear(&a.output, &context);
    (
        out,
        AttentionCache {
            q,
            k,
            v,
            probs,
            context,
        },
    )
}

/// Returns `(dL/dxq, dL/dxkv)`. For self-attention the caller adds the two.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<F: Scalar>(
    a: &Attention<F>,
    cache: &AttentionCache<F>,
    xq: &Array2<F>,
    xkv: &Array2<F>,
    q_spans: &Spans,
    k_spans: &Spans,
    heads: usize,
    dout: &Array2<F>,
    g: &mut Attention<F>,
) -> (Array2<F>, Array2<F>) {
    let dctx = linear_backward(&a.output, &cache.context, dout, &mut g.output);
    let d = dctx.ncols();
    let dh = d / heads;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let mut dq = Array2::<F>::zeros(cache.q.raw_dim());
    let mut dk = Array2::<F>::zeros(cache.k.raw_dim());
    let mut dv = Array2::<F>::zeros(cache.v.raw_dim());
    {
        let (q, k, v) = (contiguous(&cache.q), contiguous(&cache.k), contiguous(&cache.v));
        let dctx = contiguous(&dctx);
        let dq = dq.as_slice_mut().unwrap();
        let dk = dk.as_slice_mut().unwrap();
        let dv = dv.as_slice_mut().unwrap();
        let mut block = 0;
        for b in 0..q_spans.len() {
            let (qs, qe) = q_spans.range(b);
            let (ks, ke) = k_spans.range(b);
            let (tq, tk) = (qe - qs, ke - ks);
            for h in 0..heads {
                let p = &cache.probs[block];
                block += 1;
                let col = h * dh;
                let mut ds = vec![F::zero(); tk];
                for i in 0..tq {
                    let prow = &p[i * tk..(i + 1) * tk];
                    let dci = &dctx[(qs + i) * d + col..(qs + i) * d + col + dh];
                    let mut dot = F::zero();
                    for j in 0..tk {
                        let pij = prow[j];
                        if pij == F::zero() {
                            ds[j] = F::zero();
                            continue;
                        }
                        let row = (ks + j) * d + col;
                        let vj = &v[row..row + dh];
                        let dp = dci.iter().zip(vj).map(|(&x, &y)| x * y).sum::<F>();
                        ds[j] = dp;
                        dot += pij * dp;
                        let dvj = &mut dv[row..row + dh];
                        for (o, &x) in dvj.iter_mut().zip(dci) {
                            *o += pij * x;
                        }
                    }
                    let qrow = (qs + i) * d + col;
                    for j in 0..tk {
                        let pij = prow[j];
                        if pij == F::zero() {
                            continue;
                        }
                        let s = pij * (ds[j] - dot) * scale;
                        let krow = (ks + j) * d + col;
                        for c in 0..dh {
                            dq[qrow + c] += s * k[krow + c];
                            dk[krow + c] += s * q[qrow + c];
                        }
                    }
                }
            }
        }
    }
    let dxq = linear_backward(&a.query, xq, &dq, &mut g.query);
    let mut dxkv = linear_backward(&a.key, xkv, &dk, &mut g.key);
    dxkv += &linear_backward(&a.value, xkv, &dv, &mut g.value);
    (dxq, dxkv)
}

pub(crate) struct FeedForwardCache<F> {
    input: Array2<F>,
    hidden: Array2<F>,
}

pub(crate) fn feed_forward<F: Scalar>(f: &FeedForward<F>, x: &Array2<F>) -> Array2<F> {
    let mut hidden = linear(&f.inner, x);
    hidden.mapv_inplace(|v| v.max(F::zero()));
    linear(&f.outer, &hidden)
}

pub(crate) fn feed_forward_train<F: Scalar>(
    f: &FeedForward<F>,
    x: Array2<F>,
) -> (Array2<F>, FeedForwardCache<F>) {
    let mut hidden = linear(&f.inner, &x);
    hidden.mapv_inplace(|v| v.max(F::zero()));
    let out = linear(&f.outer, &hidden);
    (out, FeedForwardCache { input: x, hidden })
}

pub(crate) fn feed_forward_backward<F: Scalar>(
    f: &FeedForward<F>,
    cache: &FeedForwardCache<F>,
    dout: &Array2<F>,
    g: &mut FeedForward<F>,
) -> Array2<F> {
    let mut dhidden = linear_backward(&f.outer, &cache.hidden, dout, &mut g.outer);
    ndarray::Zip::from(&mut dhidden)
        .and(&cache.hidden)
        .for_each(|d, &h| {
            if h <= F::zero() {
                *d = F::zero();
            }
        });
    linear_backward(&f.inner, &cache.input, &dhidden, &mut g.inner)
}

/// Inverted dropout mask: entries are `0` or `1 / (1 - p)`.
pub(crate) fn dropout_mask<F: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut R,
) -> Array2<F> {
    let keep = F::from_f64_lossy(1.0 / (1.0 - p));
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

/// Sinusoidal position table, `max_len x d`.
pub(crate) fn positional_table<F: Scalar>(max_len: usize, d: usize) -> Array2<F> {
    Array2::from_shape_fn((max_len, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
        F::from_f64_lossy(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// `E[id] * sqrt(d) + P[pos]` for every token.
pub(crate) fn embed<F: Scalar>(
    table: &Array2<F>,
    positions: &Array2<F>,
    ids: &[u32],
    pos: &[usize],
) -> Array2<F> {
    let d = table.ncols();
    let scale = F::from_usize(d).unwrap().sqrt();
    let mut x = Array2::zeros((ids.len(), d));
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        let e = table.row(ids[r] as usize);
        let p = positions.row(pos[r]);
        for c in 0..d {
            row[c] = e[c] * scale + p[c];
        }
    }
    x
}

pub(crate) fn embed_backward<F: Scalar>(grad_table: &mut Array2<F>, ids: &[u32], dx: &Array2<F>) {
    let d = grad_table.ncols();
    let scale = F::from_usize(d).unwrap().sqrt();
    for (r, row) in dx.rows().into_iter().enumerate() {
        let mut g = grad_table.row_mut(ids[r] as usize);
        for c in 0..d {
            g[c] += row[c] * scale;
        }
    }
}
