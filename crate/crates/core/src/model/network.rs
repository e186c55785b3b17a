use ndarray::Array2;
use rand::{Rng, RngCore};

use super::layers::{
    attention_backward, attention_forward, dropout_mask, embed, embed_backward,
    feed_forward_backward, feed_forward_train, linear, linear_backward, norm_backward,
    norm_forward, AttentionCache, FeedForwardCache, NormCache, Spans,
};
use super::loss::smoothed_cross_entropy;
use super::{Model, Parameters, Scalar};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// Source sequences and gold target sequences (characters then `EOS`).
/// The decoder reads `BOS` followed by the gold sequence minus its last id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Batch {
    pub sources: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn push(&mut self, source: Vec<u32>, target: Vec<u32>) {
        self.sources.push(source);
        self.targets.push(target);
    }

    /// Number of scored target positions.
    pub fn target_tokens(&self) -> usize {
        self.targets.iter().map(Vec::len).sum()
    }
}

pub(crate) struct Packed {
    pub(crate) ids: Vec<u32>,
    pub(crate) pos: Vec<usize>,
    pub(crate) spans: Spans,
}

impl<F: Scalar> Model<F> {
    pub(crate) fn pack<'a>(&self, seqs: impl IntoIterator<Item = &'a [u32]>) -> Result<Packed> {
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut lengths = Vec::new();
        for seq in seqs {
            if seq.is_empty() {
                return Err(Error::Config("empty sequence".into()));
            }
            if seq.len() > self.config.max_len {
                return Err(Error::Overlength {
                    len: seq.len(),
                    max: self.config.max_len,
                });
            }
            if let Some(&bad) = seq.iter().find(|&&id| id as usize >= self.config.vocab_size) {
                return Err(Error::Config(format!(
                    "id {bad} outside a vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            ids.extend_from_slice(seq);
            pos.extend(0..seq.len());
            lengths.push(seq.len());
        }
        Ok(Packed {
            ids,
            pos,
            spans: Spans::from_lengths(lengths),
        })
    }
}

fn decoder_inputs(targets: &[Vec<u32>]) -> Vec<Vec<u32>> {
    targets
        .iter()
        .map(|t| {
            let mut input = Vec::with_capacity(t.len());
            input.push(Vocabulary::BOS);
            input.extend_from_slice(&t[..t.len().saturating_sub(1)]);
            input
        })
        .collect()
}

struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl Dropout<'_> {
    fn apply<F: Scalar>(&mut self, x: Array2<F>) -> (Array2<F>, Option<Array2<F>>) {
        match self.rng.as_mut() {
            Some(rng) if self.p > 0.0 => {
                let mask = dropout_mask(x.nrows(), x.ncols(), self.p, &mut **rng);
                (x * &mask, Some(mask))
            }
            _ => (x, None),
        }
    }
}

fn undrop<F: Scalar>(dy: &Array2<F>, mask: &Option<Array2<F>>) -> Array2<F> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

struct EncoderLayerTape<F> {
    n1: NormCache<F>,
    h1: Array2<F>,
    attn: AttentionCache<F>,
    drop1: Option<Array2<F>>,
    n2: NormCache<F>,
    ff: FeedForwardCache<F>,
    drop2: Option<Array2<F>>,
}

struct DecoderLayerTape<F> {
    n1: NormCache<F>,
    h1: Array2<F>,
    self_attn: AttentionCache<F>,
    drop1: Option<Array2<F>>,
    n2: NormCache<F>,
    h2: Array2<F>,
    cross_attn: AttentionCache<F>,
    drop2: Option<Array2<F>>,
    n3: NormCache<F>,
    ff: FeedForwardCache<F>,
    drop3: Option<Array2<F>>,
}

struct Tape<F> {
    src: Packed,
    tgt: Packed,
    src_drop: Option<Array2<F>>,
    encoder: Vec<EncoderLayerTape<F>>,
    encoder_norm: NormCache<F>,
    memory: Array2<F>,
    tgt_drop: Option<Array2<F>>,
    decoder: Vec<DecoderLayerTape<F>>,
    decoder_norm: NormCache<F>,
    decoder_out: Array2<F>,
}

impl<F: Scalar> Model<F> {
    fn run(&self, src: Packed, tgt: Packed, dropout: &mut Dropout<'_>) -> (Array2<F>, Tape<F>) {
        let p = &self.params;
        let heads = self.config.heads;

        let x = embed(&p.src_embed, &self.positions, &src.ids, &src.pos);
        let (mut x, src_drop) = dropout.apply(x);
        let mut encoder = Vec::with_capacity(p.encoder.len());
        for layer in &p.encoder {
            let (h1, n1) = norm_forward(&layer.attn_norm, &x);
            let (a, attn) = attention_forward(&layer.attn, &h1, &h1, &src.spans, &src.spans, heads, false);
            let (a, drop1) = dropout.apply(a);
            x += &a;
            let (h2, n2) = norm_forward(&layer.ff_norm, &x);
            let (f, ff) = feed_forward_train(&layer.ff, h2);
            let (f, drop2) = dropout.apply(f);
            x += &f;
            encoder.push(EncoderLayerTape {
                n1,
                h1,
                attn,
                drop1,
                n2,
                ff,
                drop2,
            });
        }
        let (memory, encoder_norm) = norm_forward(&p.encoder_norm, &x);

        let y = embed(&p.tgt_embed, &self.positions, &tgt.ids, &tgt.pos);
        let (mut y, tgt_drop) = dropout.apply(y);
        let mut decoder = Vec::with_capacity(p.decoder.len());
        for layer in &p.decoder {
            let (h1, n1) = norm_forward(&layer.self_norm, &y);
            let (a, self_attn) =
                attention_forward(&layer.self_attn, &h1, &h1, &tgt.spans, &tgt.spans, heads, true);
            let (a, drop1) = dropout.apply(a);
            y += &a;
            let (h2, n2) = norm_forward(&layer.cross_norm, &y);
            let (c, cross_attn) = attention_forward(
                &layer.cross_attn,
                &h2,
                &memory,
                &tgt.spans,
                &src.spans,
                heads,
                false,
            );
            let (c, drop2) = dropout.apply(c);
            y += &c;
            let (h3, n3) = norm_forward(&layer.ff_norm, &y);
            let (f, ff) = feed_forward_train(&layer.ff, h3);
            let (f, drop3) = dropout.apply(f);
            y += &f;
            decoder.push(DecoderLayerTape {
                n1,
                h1,
                self_attn,
                drop1,
                n2,
                h2,
                cross_attn,
                drop2,
                n3,
                ff,
                drop3,
            });
        }
        let (decoder_out, decoder_norm) = norm_forward(&p.decoder_norm, &y);
        let logits = linear(&p.output, &decoder_out);
        (
            logits,
            Tape {
                src,
                tgt,
                src_drop,
                encoder,
                encoder_norm,
                memory,
                tgt_drop,
                decoder,
                decoder_norm,
                decoder_out,
            },
        )
    }

    fn backprop(&self, tape: &Tape<F>, dlogits: &Array2<F>, g: &mut Parameters<F>) {
        let p = &self.params;
        let heads = self.config.heads;
        let (src_spans, tgt_spans) = (&tape.src.spans, &tape.tgt.spans);

        let dout = linear_backward(&p.output, &tape.decoder_out, dlogits, &mut g.output);
        let mut dy = norm_backward(&p.decoder_norm, &tape.decoder_norm, &dout, &mut g.decoder_norm);
        let mut dmemory = Array2::<F>::zeros(tape.memory.raw_dim());
        for ((layer, t), gl) in p.decoder.iter().zip(&tape.decoder).zip(g.decoder.iter_mut()).rev() {
            let df = undrop(&dy, &t.drop3);
            let dh3 = feed_forward_backward(&layer.ff, &t.ff, &df, &mut gl.ff);
            dy += &norm_backward(&layer.ff_norm, &t.n3, &dh3, &mut gl.ff_norm);

            let dc = undrop(&dy, &t.drop2);
            let (dh2, dm) = attention_backward(
                &layer.cross_attn,
                &t.cross_attn,
                &t.h2,
                &tape.memory,
                tgt_spans,
                src_spans,
                heads,
                &dc,
                &mut gl.cross_attn,
            );
            dmemory += &dm;
            dy += &norm_backward(&layer.cross_norm, &t.n2, &dh2, &mut gl.cross_norm);

            let da = undrop(&dy, &t.drop1);
            let (dq, dkv) = attention_backward(
                &layer.self_attn,
                &t.self_attn,
                &t.h1,
                &t.h1,
                tgt_spans,
                tgt_spans,
                heads,
                &da,
                &mut gl.self_attn,
            );
            let dh1 = dq + &dkv;
            dy += &norm_backward(&layer.self_norm, &t.n1, &dh1, &mut gl.self_norm);
        }
        let dy = undrop(&dy, &tape.tgt_drop);
        embed_backward(&mut g.tgt_embed, &tape.tgt.ids, &dy);

        let mut dx = norm_backward(&p.encoder_norm, &tape.encoder_norm, &dmemory, &mut g.encoder_norm);
        for ((layer, t), gl) in p.encoder.iter().zip(&tape.encoder).zip(g.encoder.iter_mut()).rev() {
            let df = undrop(&dx, &t.drop2);
            let dh2 = feed_forward_backward(&layer.ff, &t.ff, &df, &mut gl.ff);
            dx += &norm_backward(&layer.ff_norm, &t.n2, &dh2, &mut gl.ff_norm);

            let da = undrop(&dx, &t.drop1);
            let (dq, dkv) = attention_backward(
                &layer.attn, &t.attn, &t.h1, &t.h1, src_spans, src_spans, heads, &da, &mut gl.attn,
            );
            let dh1 = dq + &dkv;
            dx += &norm_backward(&layer.attn_norm, &t.n1, &dh1, &mut gl.attn_norm);
        }
        let dx = undrop(&dx, &tape.src_drop);
        embed_backward(&mut g.src_embed, &tape.src.ids, &dx);
    }

    fn pack_batch(&self, batch: &Batch) -> Result<(Packed, Packed, Vec<u32>)> {
        if batch.sources.len() != batch.targets.len() {
            return Err(Error::Config("sources and targets differ in count".into()));
        }
        let inputs = decoder_inputs(&batch.targets);
        let src = self.pack(batch.sources.iter().map(Vec::as_slice))?;
        let tgt = self.pack(inputs.iter().map(Vec::as_slice))?;
        let gold: Vec<u32> = batch.targets.iter().flatten().copied().collect();
        Ok((src, tgt, gold))
    }

    /// Mean smoothed cross-entropy over all target positions of the batch,
    /// with parameter gradients accumulated into `grads`. Dropout is active
    /// only when an rng is supplied.
    pub fn loss_and_grads(
        &self,
        batch: &Batch,
        dropout_rng: Option<&mut dyn RngCore>,
        grads: &mut Parameters<F>,
    ) -> Result<f64> {
        let (src, tgt, gold) = self.pack_batch(batch)?;
        let mut dropout = Dropout {
            p: self.config.dropout,
            rng: dropout_rng,
        };
        let (logits, tape) = self.run(src, tgt, &mut dropout);
        let (loss, dlogits) = smoothed_cross_entropy(&logits, &gold, self.config.label_smoothing);
        self.backprop(&tape, &dlogits, grads);
        Ok(loss)
    }

    /// Evaluation-mode loss (no dropout, no gradients).
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let (src, tgt, gold) = self.pack_batch(batch)?;
        let (logits, _) = self.run(src, tgt, &mut Dropout { p: 0.0, rng: None });
        Ok(smoothed_cross_entropy(&logits, &gold, self.config.label_smoothing).0)
    }

    /// Logits for every position of `decoder_input` (which normally starts
    /// with `BOS`), one row per position, evaluation mode.
    pub fn forward(&self, source: &[u32], decoder_input: &[u32]) -> Result<Array2<F>> {
        let src = self.pack([source])?;
        let tgt = self.pack([decoder_input])?;
        Ok(self.run(src, tgt, &mut Dropout { p: 0.0, rng: None }).0)
    }

    /// Runs a training-mode forward pass with dropout drawn from `rng`.
    pub fn forward_with_dropout<R: Rng>(
        &self,
        source: &[u32],
        decoder_input: &[u32],
        rng: &mut R,
    ) -> Result<Array2<F>> {
        let src = self.pack([source])?;
        let tgt = self.pack([decoder_input])?;
        let mut dropout = Dropout {
            p: self.config.dropout,
            rng: Some(rng),
        };
        Ok(self.run(src, tgt, &mut dropout).0)
    }
}
