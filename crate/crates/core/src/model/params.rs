use ndarray::{Array1, Array2};
use rand::Rng;

use super::{ModelConfig, Scalar};

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

fn uniform<F: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| F::from_f64_lossy(rng.gen_range(-bound..bound)))
}

fn slice<F>(a: &Array2<F>) -> &[F] {
    a.as_slice().expect("standard layout")
}

fn slice1<F>(a: &Array1<F>) -> &[F] {
    a.as_slice().expect("standard layout")
}

/// `y = x W + b` with `W` stored input-major (`in x out`).
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            weight: uniform(fan_in, fan_out, bound, rng),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, F>>) {
        out.push(TensorRef {
            name: format!("{prefix}.weight"),
            shape: self.weight.shape().to_vec(),
            data: slice(&self.weight),
        });
        out.push(TensorRef {
            name: format!("{prefix}.bias"),
            shape: self.bias.shape().to_vec(),
            data: slice1(&self.bias),
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        out.push(self.weight.as_slice_mut().expect("standard layout"));
        out.push(self.bias.as_slice_mut().expect("standard layout"));
    }

    fn map<G: Scalar>(&self, f: &impl Fn(F) -> G) -> Linear<G> {
        Linear {
            weight: self.weight.mapv(f),
            bias: self.bias.mapv(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<F> {
    pub gain: Array1<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> LayerNorm<F> {
    fn new(width: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(width),
            bias: Array1::zeros(width),
        }
    }

    fn zeros(width: usize) -> Self {
        LayerNorm {
            gain: Array1::zeros(width),
            bias: Array1::zeros(width),
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, F>>) {
        for (name, t) in [("gain", &self.gain), ("bias", &self.bias)] {
            out.push(TensorRef {
                name: format!("{prefix}.{name}"),
                shape: t.shape().to_vec(),
                data: slice1(t),
            });
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        out.push(self.gain.as_slice_mut().expect("standard layout"));
        out.push(self.bias.as_slice_mut().expect("standard layout"));
    }

    fn map<G: Scalar>(&self, f: &impl Fn(F) -> G) -> LayerNorm<G> {
        LayerNorm {
            gain: self.gain.mapv(f),
            bias: self.bias.mapv(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention<F> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
}

impl<F: Scalar> Attention<F> {
    fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Attention {
            query: Linear::init(d, d, rng),
            key: Linear::init(d, d, rng),
            value: Linear::init(d, d, rng),
            output: Linear::init(d, d, rng),
        }
    }

    fn zeros(d: usize) -> Self {
        Attention {
            query: Linear::zeros(d, d),
            key: Linear::zeros(d, d),
            value: Linear::zeros(d, d),
            output: Linear::zeros(d, d),
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, F>>) {
        self.query.collect(&format!("{prefix}.query"), out);
        self.key.collect(&format!("{prefix}.key"), out);
        self.value.collect(&format!("{prefix}.value"), out);
        self.output.collect(&format!("{prefix}.output"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        self.query.collect_mut(out);
        self.key.collect_mut(out);
        self.value.collect_mut(out);
        self.output.collect_mut(out);
    }

    fn map<G: Scalar>(&self, f: &impl Fn(F) -> G) -> Attention<G> {
        Attention {
            query: self.query.map(f),
            key: self.key.map(f),
            value: self.value.map(f),
            output: self.output.map(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<F> {
    pub inner: Linear<F>,
    pub outer: Linear<F>,
}

impl<F: Scalar> FeedForward<F> {
    fn init<R: Rng + ?Sized>(d: usize, d_ff: usize, rng: &mut R) -> Self {
        FeedForward {
            inner: Linear::init(d, d_ff, rng),
            outer: Linear::init(d_ff, d, rng),
        }
    }

    fn zeros(d: usize, d_ff: usize) -> Self {
        FeedForward {
            inner: Linear::zeros(d, d_ff),
            outer: Linear::zeros(d_ff, d),
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, F>>) {
        self.inner.collect(&format!("{prefix}.inner"), out);
        self.outer.collect(&format!("{prefix}.outer"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        self.inner.collect_mut(out);
        self.outer.collect_mut(out);
    }

    fn map<G: Scalar>(&self, f: &impl Fn(F) -> G) -> FeedForward<G> {
        FeedForward {
            inner: self.inner.map(f),
            outer: self.outer.map(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<F> {
    pub attn_norm: LayerNorm<F>,
    pub attn: Attention<F>,
    pub ff_norm: LayerNorm<F>,
    pub ff: FeedForward<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer<F> {
    pub self_norm: LayerNorm<F>,
    pub self_attn: Attention<F>,
    pub cross_norm: LayerNorm<F>,
    pub cross_attn: Attention<F>,
    pub ff_norm: LayerNorm<F>,
    pub ff: FeedForward<F>,
}

/// Every learned tensor of the network. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<F> {
    pub src_embed: Array2<F>,
    pub tgt_embed: Array2<F>,
    pub encoder: Vec<EncoderLayer<F>>,
    pub encoder_norm: LayerNorm<F>,
    pub decoder: Vec<DecoderLayer<F>>,
    pub decoder_norm: LayerNorm<F>,
    pub output: Linear<F>,
}

impl<F: Scalar> Parameters<F> {
    pub fn init<R: Rng + ?Sized>(c: &ModelConfig, rng: &mut R) -> Self {
        let d = c.d_model;
        let embed_bound = (3.0 / d as f64).sqrt();
        let src_embed = uniform(c.vocab_size, d, embed_bound, rng);
        let tgt_embed = uniform(c.vocab_size, d, embed_bound, rng);
        let encoder = (0..c.layers_enc)
            .map(|_| EncoderLayer {
                attn_norm: LayerNorm::new(d),
                attn: Attention::init(d, rng),
                ff_norm: LayerNorm::new(d),
                ff: FeedForward::init(d, c.d_ff, rng),
            })
            .collect();
        let decoder = (0..c.layers_dec)
            .map(|_| DecoderLayer {
                self_norm: LayerNorm::new(d),
                self_attn: Attention::init(d, rng),
                cross_norm: LayerNorm::new(d),
                cross_attn: Attention::init(d, rng),
                ff_norm: LayerNorm::new(d),
                ff: FeedForward::init(d, c.d_ff, rng),
            })
            .collect();
        Parameters {
            src_embed,
            tgt_embed,
            encoder,
            encoder_norm: LayerNorm::new(d),
            decoder,
            decoder_norm: LayerNorm::new(d),
            output: Linear::init(d, c.vocab_size, rng),
        }
    }

    /// Same shapes as [`Parameters::init`], all zeros.
    pub fn zeros(c: &ModelConfig) -> Self {
        let d = c.d_model;
        Parameters {
            src_embed: Array2::zeros((c.vocab_size, d)),
            tgt_embed: Array2::zeros((c.vocab_size, d)),
            encoder: (0..c.layers_enc)
                .map(|_| EncoderLayer {
                    attn_norm: LayerNorm::zeros(d),
                    attn: Attention::zeros(d),
                    ff_norm: LayerNorm::zeros(d),
                    ff: FeedForward::zeros(d, c.d_ff),
                })
                .collect(),
            encoder_norm: LayerNorm::zeros(d),
            decoder: (0..c.layers_dec)
                .map(|_| DecoderLayer {
                    self_norm: LayerNorm::zeros(d),
                    self_attn: Attention::zeros(d),
                    cross_norm: LayerNorm::zeros(d),
                    cross_attn: Attention::zeros(d),
                    ff_norm: LayerNorm::zeros(d),
                    ff: FeedForward::zeros(d, c.d_ff),
                })
                .collect(),
            decoder_norm: LayerNorm::zeros(d),
            output: Linear::zeros(d, c.vocab_size),
        }
    }

    /// Named tensors in a fixed order shared with [`Parameters::tensors_mut`].
    pub fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        out.push(TensorRef {
            name: "src_embed".into(),
            shape: self.src_embed.shape().to_vec(),
            data: slice(&self.src_embed),
        });
        out.push(TensorRef {
            name: "tgt_embed".into(),
            shape: self.tgt_embed.shape().to_vec(),
            data: slice(&self.tgt_embed),
        });
        for (i, layer) in self.encoder.iter().enumerate() {
            let p = format!("encoder.{i}");
            layer.attn_norm.collect(&format!("{p}.attn_norm"), &mut out);
            layer.attn.collect(&format!("{p}.attn"), &mut out);
            layer.ff_norm.collect(&format!("{p}.ff_norm"), &mut out);
            layer.ff.collect(&format!("{p}.ff"), &mut out);
        }
        self.encoder_norm.collect("encoder_norm", &mut out);
        for (i, layer) in self.decoder.iter().enumerate() {
            let p = format!("decoder.{i}");
            layer.self_norm.collect(&format!("{p}.self_norm"), &mut out);
            layer.self_attn.collect(&format!("{p}.self_attn"), &mut out);
            layer.cross_norm.collect(&format!("{p}.cross_norm"), &mut out);
            layer.cross_attn.collect(&format!("{p}.cross_attn"), &mut out);
            layer.ff_norm.collect(&format!("{p}.ff_norm"), &mut out);
            layer.ff.collect(&format!("{p}.ff"), &mut out);
        }
        self.decoder_norm.collect("decoder_norm", &mut out);
        self.output.collect("output", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        out.push(self.src_embed.as_slice_mut().expect("standard layout"));
        out.push(self.tgt_embed.as_slice_mut().expect("standard layout"));
        for layer in &mut self.encoder {
            layer.attn_norm.collect_mut(&mut out);
            layer.attn.collect_mut(&mut out);
            layer.ff_norm.collect_mut(&mut out);
            layer.ff.collect_mut(&mut out);
        }
        self.encoder_norm.collect_mut(&mut out);
        for layer in &mut self.decoder {
            layer.self_norm.collect_mut(&mut out);
            layer.self_attn.collect_mut(&mut out);
            layer.cross_norm.collect_mut(&mut out);
            layer.cross_attn.collect_mut(&mut out);
            layer.ff_norm.collect_mut(&mut out);
            layer.ff.collect_mut(&mut out);
        }
        self.decoder_norm.collect_mut(&mut out);
        self.output.collect_mut(&mut out);
        out
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = F::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> Parameters<G> {
        let f = |x: F| G::from_f64_lossy(x.to_f64().expect("finite"));
        Parameters {
            src_embed: self.src_embed.mapv(f),
            tgt_embed: self.tgt_embed.mapv(f),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    attn_norm: l.attn_norm.map(&f),
                    attn: l.attn.map(&f),
                    ff_norm: l.ff_norm.map(&f),
                    ff: l.ff.map(&f),
                })
                .collect(),
            encoder_norm: self.encoder_norm.map(&f),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    self_norm: l.self_norm.map(&f),
                    self_attn: l.self_attn.map(&f),
                    cross_norm: l.cross_norm.map(&f),
                    cross_attn: l.cross_attn.map(&f),
                    ff_norm: l.ff_norm.map(&f),
                    ff: l.ff.map(&f),
                })
                .collect(),
            decoder_norm: self.decoder_norm.map(&f),
            output: self.output.map(&f),
        }
    }
}
