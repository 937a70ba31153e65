//! Binary checkpoint: magic, version, JSON header, then named tensors.
//!
//! ```text
//! "PRSNCKPT" | u32 version | u64 header_len | header JSON
//! repeated: u32 name_len | name | u32 rank | u64 dims… | values (LE f64 or f32)
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use numgrad::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::vocab::Vocab;

const MAGIC: &[u8; 8] = b"PRSNCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// How the bidirectional decoder's anchor was chosen during profile training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Position detector (cosine similarity to the profile value).
    Detected,
    /// Uniformly random response position.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    /// Storage only; values are widened back to `f64` on load.
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Conventions {
    response_end: String,
    backward_end: String,
    forward_half_input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    vocab_hash: String,
    vocab: Vec<String>,
    keys: Vec<String>,
    anchor_mode: AnchorMode,
    precision: Precision,
    conventions: Conventions,
    tensors: usize,
}

/// A trained model with everything needed to run it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    /// Profile keys in model order.
    pub keys: Vec<String>,
    pub anchor_mode: AnchorMode,
}

impl Checkpoint {
    pub fn to_bytes(&self, precision: Precision) -> Result<Vec<u8>> {
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.params.config.clone(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.tokens().to_vec(),
            keys: self.keys.clone(),
            anchor_mode: self.anchor_mode,
            precision,
            conventions: Conventions {
                response_end: "<eos>".into(),
                backward_end: "<bos>".into(),
                forward_half_input: "backward half then anchor".into(),
            },
            tensors: self.params.store.len(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(header.len() + 8 * self.params.store.num_elements() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, name, t) in self.params.store.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            match precision {
                Precision::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Precision::F32 => t
                    .data()
                    .iter()
                    .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let header_len = read_u64(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        read_exact(&mut r, &mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let vocab = Vocab::from_tokens(header.vocab)?;
        if vocab.hash() != header.vocab_hash {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }
        if vocab.len() != header.model.vocab_size || header.keys.len() != header.model.num_keys {
            return Err(Error::Checkpoint("header sizes disagree with the model config".into()));
        }
        let mut store = ParamStore::new();
        for _ in 0..header.tensors {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(match header.precision {
                    Precision::F64 => {
                        let mut b = [0u8; 8];
                        read_exact(&mut r, &mut b)?;
                        f64::from_le_bytes(b)
                    }
                    Precision::F32 => {
                        let mut b = [0u8; 4];
                        read_exact(&mut r, &mut b)?;
                        f32::from_le_bytes(b) as f64
                    }
                });
            }
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
        }
        let params = ModelParams::from_store(&header.model, store)?;
        Ok(Checkpoint {
            params,
            vocab,
            keys: header.keys,
            anchor_mode: header.anchor_mode,
        })
    }

    pub fn save(&self, path: &Path, precision: Precision) -> Result<()> {
        std::fs::write(path, self.to_bytes(precision)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("checkpoint is truncated".into()))
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
