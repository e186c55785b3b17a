//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `INFLABCK`, u32 version, u8 dtype, u32 length + config JSON,
//! u32 length + vocabulary JSON, u32 tensor count, then per tensor
//! u16 name length + name, u8 rank, u32 per dimension, raw values.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, Parameters, Scalar};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"INFLABCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A model together with the vocabulary its ids refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F: Scalar = f32> {
    pub model: Model<F>,
    pub vocab: Vocabulary,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) {
    put_u32(out, blob.len() as u32);
    out.extend_from_slice(blob);
}

pub fn write_checkpoint<F: Scalar>(model: &Model<F>, vocab: &Vocabulary) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(F::DTYPE.code());
    put_blob(&mut out, &serde_json::to_vec(model.config()).expect("config serializes"));
    put_blob(&mut out, &serde_json::to_vec(vocab).expect("vocabulary serializes"));
    let tensors = model.params().tensors();
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &dim in &t.shape {
            put_u32(&mut out, dim as u32);
        }
        for &x in t.data {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

pub fn read_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let code = r.u8()?;
    if code != F::DTYPE.code() {
        return Err(Error::Checkpoint(format!(
            "stored element type {code} does not match requested {:?}",
            F::DTYPE
        )));
    }
    let config: ModelConfig = serde_json::from_slice(r.blob()?)
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let vocab: Vocabulary = serde_json::from_slice(r.blob()?)
        .map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;
    config.validate()?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} symbols, model expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }

    let mut params = Parameters::<F>::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, {} expected",
            expected.len()
        )));
    }
    let width = F::DTYPE.width();
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let len = r.u16()? as usize;
        let stored = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if stored != name || &dims != shape {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name} {shape:?}, found {stored} {dims:?}"
            )));
        }
        let raw = r.take(slot.len() * width)?;
        for (x, chunk) in slot.iter_mut().zip(raw.chunks_exact(width)) {
            *x = F::read_le(chunk);
        }
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(Checkpoint {
        model: Model::from_parts(config, params)?,
        vocab,
    })
}

pub fn save_checkpoint<F: Scalar>(path: &Path, model: &Model<F>, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, write_checkpoint(model, vocab)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DEFAULT_SENTINELS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Model<f32>, Vocabulary) {
        let vocab = Vocabulary::from_parts(["N".to_string(), "PL".to_string()], ['a', 'b', 'z'], DEFAULT_SENTINELS);
        let mut config = ModelConfig::tiny(vocab.len());
        config.layers_enc = 1;
        config.layers_dec = 1;
        let model = Model::init(config, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        (model, vocab)
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let (model, vocab) = fixture();
        let bytes = write_checkpoint(&model, &vocab);
        let back: Checkpoint<f32> = read_checkpoint(&bytes).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.vocab, vocab);
        assert_eq!(write_checkpoint(&back.model, &back.vocab), bytes);
    }

    #[test]
    fn file_round_trip() {
        let (model, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &vocab).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(back.model, model);
    }

    #[test]
    fn corrupt_input_rejected() {
        let (model, vocab) = fixture();
        let bytes = write_checkpoint(&model, &vocab);
        assert!(read_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_checkpoint::<f64>(&bytes).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint::<f32>(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(read_checkpoint::<f32>(&long).is_err());
    }
}
