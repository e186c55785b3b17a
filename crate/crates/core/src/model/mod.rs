//! Character-level encoder-decoder transformer.
//!
//! Pre-norm residual blocks, sinusoidal positions, ReLU feed-forward layers
//! and untied source, target and output embeddings. Sequences in a batch are
//! packed end to end rather than padded: every linear layer runs once over
//! all tokens of the batch, and attention runs per sequence. Gradients are
//! computed by hand-written backpropagation.

mod checkpoint;
mod decode;
mod layers;
mod loss;
mod network;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, DType};
pub use decode::Decoded;
pub use loss::smoothed_cross_entropy;
pub use network::Batch;
pub use params::{Attention, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, Parameters};

/// Floating-point element type of a model.
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite value")
    }

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub d_model: usize,
    /// Inner width of the feed-forward sublayers.
    pub d_ff: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Longest source or target sequence, BOS and EOS included.
    pub max_len: usize,
    pub vocab_size: usize,
    pub label_smoothing: f64,
}

impl ModelConfig {
    /// 4+4 layers, width 256, feed-forward 1024, 4 heads.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            layers_enc: 4,
            layers_dec: 4,
            d_model: 256,
            d_ff: 1024,
            heads: 4,
            dropout: 0.1,
            max_len: 128,
            vocab_size,
            label_smoothing: 0.1,
        }
    }

    /// Desk-scale variant: 2+2 layers, width 64.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            layers_enc: 2,
            layers_dec: 2,
            d_model: 64,
            d_ff: 256,
            heads: 4,
            dropout: 0.1,
            max_len: 128,
            vocab_size,
            label_smoothing: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers_enc", self.layers_enc),
            ("layers_dec", self.layers_dec),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1]",
                self.label_smoothing
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<F: Scalar = f32> {
    config: ModelConfig,
    params: Parameters<F>,
    positions: Array2<F>,
}

impl<F: Scalar> Model<F> {
    /// Xavier-uniform weights, unit layer-norm gains, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = Parameters::init(&config, rng);
        let positions = layers::positional_table(config.max_len, config.d_model);
        Ok(Model {
            config,
            params,
            positions,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Parameters<F>) -> Result<Self> {
        config.validate()?;
        let expected = Parameters::<F>::zeros(&config);
        let shapes = |p: &Parameters<F>| p.tensors().into_iter().map(|t| t.shape).collect::<Vec<_>>();
        if shapes(&expected) != shapes(&params) {
            return Err(Error::Checkpoint("tensor shapes do not match the configuration".into()));
        }
        let positions = layers::positional_table(config.max_len, config.d_model);
        Ok(Model {
            config,
            params,
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<F> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Converts every parameter to another element type.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            positions: layers::positional_table(self.config.max_len, self.config.d_model),
        }
    }
}
