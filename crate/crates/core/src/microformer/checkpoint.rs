//! Checkpoint file layout:
//!
//! ```text
//! offset 0   8 bytes   magic "DALIGNMF"
//! offset 8   8 bytes   header length N, u64 little-endian
//! offset 16  N bytes   UTF-8 JSON header (CheckpointHeader)
//! offset 16+N          every tensor listed in header.tensors, in that order,
//!                      row-major, each value an f64 little-endian
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::tokenizer::{Specials, Vocabulary};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DALIGNMF";
const FORMAT: &str = "dalign-microformer";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub vocab_fingerprint: String,
    pub specials: Specials,
    pub tensors: Vec<TensorSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub vocab_fingerprint: String,
    pub specials: Specials,
}

impl Checkpoint {
    pub fn new(params: ModelParams, seed: u64, vocab: &Vocabulary) -> Self {
        Checkpoint {
            params,
            seed,
            vocab_fingerprint: vocab.fingerprint(),
            specials: vocab.specials(),
        }
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format: FORMAT.to_string(),
            version: VERSION,
            config: self.params.config,
            seed: self.seed,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            specials: self.specials,
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, m)| TensorSpec {
                    name,
                    shape: [m.rows, m.cols],
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, m) in self.params.tensors() {
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidCheckpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad("unsupported format or version"));
        }
        header.config.validate()?;
        let mut params = ModelParams::zeros(header.config);
        let expected: Vec<TensorSpec> = params
            .tensors()
            .into_iter()
            .map(|(name, m)| TensorSpec {
                name,
                shape: [m.rows, m.cols],
            })
            .collect();
        if expected != header.tensors {
            return Err(bad("tensor list does not match the configuration"));
        }
        let mut data = &bytes[16 + len..];
        for m in params.tensors_mut() {
            let n = m.data.len() * 8;
            if data.len() < n {
                return Err(bad("truncated tensor data"));
            }
            for (v, chunk) in m.data.iter_mut().zip(data[..n].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            data = &data[n..];
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            params,
            seed: header.seed,
            vocab_fingerprint: header.vocab_fingerprint,
            specials: header.specials,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Fails unless `vocab` is the vocabulary the model was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let actual = vocab.fingerprint();
        if actual != self.vocab_fingerprint {
            return Err(Error::VocabHashMismatch {
                expected: self.vocab_fingerprint.clone(),
                actual,
            });
        }
        Ok(())
    }
}
