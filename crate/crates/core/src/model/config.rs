use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture sizes. Compute is always `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Width of the tanh layer inside the attention and key-selector scorers.
    pub attn_dim: usize,
    pub vocab_size: usize,
    pub num_keys: usize,
    /// Longest post accepted and longest response generated.
    pub max_len: usize,
    pub p_z_threshold: f64,
    /// Read profile value embeddings from the word embedding table instead of
    /// a separate value table.
    pub tie_value_embeddings: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: emb 32, hidden 64, one layer.
    pub fn desk(vocab_size: usize, num_keys: usize, max_len: usize) -> Self {
        ModelConfig {
            emb_dim: 32,
            hidden_dim: 64,
            num_layers: 1,
            attn_dim: 32,
            vocab_size,
            num_keys,
            max_len,
            p_z_threshold: 0.5,
            tie_value_embeddings: true,
        }
    }

    /// Tiny sizes used for gradient checking.
    pub fn toy(vocab_size: usize, num_keys: usize) -> Self {
        ModelConfig {
            emb_dim: 4,
            hidden_dim: 8,
            num_layers: 1,
            attn_dim: 4,
            vocab_size,
            num_keys,
            max_len: 8,
            p_z_threshold: 0.5,
            tie_value_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("emb_dim", self.emb_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("attn_dim", self.attn_dim),
            ("num_keys", self.num_keys),
            ("max_len", self.max_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size <= crate::vocab::NUM_RESERVED {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no content tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.p_z_threshold) {
            return Err(Error::Config("p_z_threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
