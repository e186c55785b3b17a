//! Greedy decoding with cached keys and values, one new token per step.

use ndarray::Array2;

use super::layers::{attention_forward, embed, feed_forward, linear, norm, Spans};
use super::{Model, Scalar};
use crate::corpus::Vocabulary;
use crate::error::Result;

/// Output of greedy decoding for one source. `ids` excludes the closing
/// `EOS`; `finished` is false when the length cap was hit first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub ids: Vec<u32>,
    pub finished: bool,
}

/// Default output cap for a source of `source_len` ids.
pub fn max_output_len(source_len: usize) -> usize {
    (2 * source_len).max(32)
}

/// Context row of one query against `t` cached key/value rows.
fn attend_one<F: Scalar>(q: &[F], keys: &[F], values: &[F], heads: usize, out: &mut [F]) {
    let d = q.len();
    let dh = d / heads;
    let t = keys.len() / d;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let mut scores = vec![F::zero(); t];
    for h in 0..heads {
        let col = h * dh;
        let qh = &q[col..col + dh];
        let mut max = F::neg_infinity();
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &keys[j * d + col..j * d + col + dh];
            *s = qh.iter().zip(kj).map(|(&a, &b)| a * b).sum::<F>() * scale;
            if *s > max {
                max = *s;
            }
        }
        let mut total = F::zero();
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        let o = &mut out[col..col + dh];
        o.iter_mut().for_each(|x| *x = F::zero());
        for (j, &s) in scores.iter().enumerate() {
            let p = s / total;
            let vj = &values[j * d + col..j * d + col + dh];
            for (x, &v) in o.iter_mut().zip(vj) {
                *x += p * v;
            }
        }
    }
}

struct SeqState<F> {
    source_range: (usize, usize),
    limit: usize,
    self_keys: Vec<Vec<F>>,
    self_values: Vec<Vec<F>>,
    out: Vec<u32>,
    last: u32,
    finished: bool,
}

fn argmax<F: Scalar>(row: ndarray::ArrayView1<'_, F>) -> u32 {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best as u32
}

impl<F: Scalar> Model<F> {
    /// Encoder output for packed sources, evaluation mode.
    pub(crate) fn encode(&self, sources: &[Vec<u32>]) -> Result<(Array2<F>, Spans)> {
        let src = self.pack(sources.iter().map(Vec::as_slice))?;
        let p = &self.params;
        let mut x = embed(&p.src_embed, &self.positions, &src.ids, &src.pos);
        for layer in &p.encoder {
            let h = norm(&layer.attn_norm, &x);
            let (a, _) =
                attention_forward(&layer.attn, &h, &h, &src.spans, &src.spans, self.config.heads, false);
            x += &a;
            x += &feed_forward(&layer.ff, &norm(&layer.ff_norm, &x));
        }
        Ok((norm(&p.encoder_norm, &x), src.spans))
    }

    /// Greedy decoding with the default cap of `max(32, 2 * source length)`.
    pub fn greedy_decode(&self, sources: &[Vec<u32>]) -> Result<Vec<Decoded>> {
        self.greedy_decode_with(sources, max_output_len)
    }

    /// Greedy decoding of every source at once; `limit(source_len)` caps
    /// the number of generated ids, `EOS` included. The decoder's own
    /// position table is a further cap.
    pub fn greedy_decode_with(
        &self,
        sources: &[Vec<u32>],
        limit: impl Fn(usize) -> usize,
    ) -> Result<Vec<Decoded>> {
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let (memory, spans) = self.encode(sources)?;
        let p = &self.params;
        let d = self.config.d_model;
        let heads = self.config.heads;
        let cross: Vec<(Array2<F>, Array2<F>)> = p
            .decoder
            .iter()
            .map(|l| (linear(&l.cross_attn.key, &memory), linear(&l.cross_attn.value, &memory)))
            .collect();
        let layers = p.decoder.len();
        let mut states: Vec<SeqState<F>> = sources
            .iter()
            .enumerate()
            .map(|(i, s)| SeqState {
                source_range: spans.range(i),
                limit: limit(s.len()).min(self.config.max_len),
                self_keys: vec![Vec::new(); layers],
                self_values: vec![Vec::new(); layers],
                out: Vec::new(),
                last: Vocabulary::BOS,
                finished: false,
            })
            .collect();

        for step in 0.. {
            let active: Vec<usize> = (0..states.len())
                .filter(|&i| !states[i].finished && step < states[i].limit)
                .collect();
            if active.is_empty() {
                break;
            }
            let ids: Vec<u32> = active.iter().map(|&i| states[i].last).collect();
            let pos = vec![step; active.len()];
            let mut x = embed(&p.tgt_embed, &self.positions, &ids, &pos);
            let mut ctx = Array2::<F>::zeros((active.len(), d));
            for (l, layer) in p.decoder.iter().enumerate() {
                let h = norm(&layer.self_norm, &x);
                let q = linear(&layer.self_attn.query, &h);
                let k = linear(&layer.self_attn.key, &h);
                let v = linear(&layer.self_attn.value, &h);
                for (r, &i) in active.iter().enumerate() {
                    let st = &mut states[i];
                    st.self_keys[l].extend(k.row(r).iter());
                    st.self_values[l].extend(v.row(r).iter());
                    attend_one(
                        q.row(r).as_slice().unwrap(),
                        &st.self_keys[l],
                        &st.self_values[l],
                        heads,
                        ctx.row_mut(r).as_slice_mut().unwrap(),
                    );
                }
                x += &linear(&layer.self_attn.output, &ctx);

                let h = norm(&layer.cross_norm, &x);
                let q = linear(&layer.cross_attn.query, &h);
                let (ck, cv) = &cross[l];
                for (r, &i) in active.iter().enumerate() {
                    let (s, e) = states[i].source_range;
                    let keys = &ck.as_slice().unwrap()[s * d..e * d];
                    let values = &cv.as_slice().unwrap()[s * d..e * d];
                    attend_one(
                        q.row(r).as_slice().unwrap(),
                        keys,
                        values,
                        heads,
                        ctx.row_mut(r).as_slice_mut().unwrap(),
                    );
                }
                x += &linear(&layer.cross_attn.output, &ctx);
                x += &feed_forward(&layer.ff, &norm(&layer.ff_norm, &x));
            }
            let logits = linear(&p.output, &norm(&p.decoder_norm, &x));
            for (r, &i) in active.iter().enumerate() {
                let next = argmax(logits.row(r));
                let st = &mut states[i];
                if next == Vocabulary::EOS {
                    st.finished = true;
                } else {
                    st.out.push(next);
                    st.last = next;
                }
            }
        }
        Ok(states
            .into_iter()
            .map(|s| Decoded {
                ids: s.out,
                finished: s.finished,
            })
            .collect())
    }
}
