//! Character-level morphological inflection with self-supervised auxiliary
//! objectives.
//!
//! The crate covers the whole pipeline: reading and subsampling inflection
//! data, turning canonical segmentations into surface ones, generating noised
//! auxiliary instances from unlabeled words, a small encoder-decoder
//! transformer with hand-written backpropagation, the multitask training
//! loop, and the trigram copy analysis used to compare trained models.

pub mod analyze;
pub mod corpus;
pub mod error;
pub mod model;
pub mod noise;
pub mod segment;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
