use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Parameters};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    vocab_hash: String,
    tensors: BTreeMap<String, TensorRecord>,
}

/// Parameters bound to the vocabulary they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub vocab_hash: String,
}

/// Serializes deterministically: tensor names sorted, floats shortest
/// round-trip.
pub fn write_checkpoint<W: Write>(mut w: W, params: &Parameters, vocab_hash: &str) -> Result<(), ModelError> {
    let tensors = params
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, TensorRecord { shape: t.shape().to_vec(), data: t.iter().copied().collect() }))
        .collect();
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: params.config.clone(),
        vocab_hash: vocab_hash.to_string(),
        tensors,
    };
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Reads a checkpoint; with `expected_vocab_hash` set, refuses one trained
/// against a different vocabulary.
pub fn read_checkpoint<R: Read>(r: R, expected_vocab_hash: Option<&str>) -> Result<Checkpoint, ModelError> {
    let mut manifest: Manifest = serde_json::from_reader(r)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format_version {}", manifest.format_version)));
    }
    if let Some(expected) = expected_vocab_hash {
        if expected != manifest.vocab_hash {
            return Err(ModelError::Checkpoint(format!(
                "vocab_hash mismatch: checkpoint has {}, vocabulary is {}",
                manifest.vocab_hash, expected
            )));
        }
    }
    let mut params = Parameters::init(&manifest.config, 0)?;
    for (name, mut t) in params.tensors_mut() {
        let rec = manifest
            .tensors
            .remove(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
        if rec.shape != t.shape() || rec.data.len() != t.len() {
            return Err(ModelError::Checkpoint(format!("tensor {name} has shape {:?}, expected {:?}", rec.shape, t.shape())));
        }
        for (dst, src) in t.iter_mut().zip(rec.data) {
            *dst = src;
        }
    }
    if let Some(extra) = manifest.tensors.keys().next() {
        return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint { params, vocab_hash: manifest.vocab_hash })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Parameters {
        let cfg = ModelConfig { layers: 1, heads: 2, dim: 4, ff_dim: 4, max_len: 6, vocab_size: 9, dropout: 0.1, cls_id: 1 };
        Parameters::init(&cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = tiny();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, "abc").unwrap();
        let ck = read_checkpoint(buf.as_slice(), Some("abc")).unwrap();
        assert_eq!(ck.params, p);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &ck.params, "abc").unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn vocab_mismatch_refused() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &tiny(), "abc").unwrap();
        let err = read_checkpoint(buf.as_slice(), Some("xyz")).unwrap_err();
        assert!(err.to_string().contains("vocab_hash mismatch"));
        assert!(read_checkpoint(buf.as_slice(), None).is_ok());
    }
}
