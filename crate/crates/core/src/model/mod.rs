//! Encoder, profile detector, attention decoders and the position detector.

mod checkpoint;
mod config;
mod decode;
mod network;
mod params;
mod position;

pub use checkpoint::{AnchorMode, Checkpoint, Precision, FORMAT_VERSION};
pub use config::ModelConfig;
pub use decode::{bi_nll, fr_nll, DecodeMode, Generated};
pub(crate) use decode::{bidirectional_generate, forward_generate, sum_terms, Chooser};
pub use network::{
    attend, attention_cache, decoder_step, encode, gate_logit, gru_step, init_state, key_scores,
    AttnCache, EncoderOutput,
};
pub use params::{
    init_bound, AttentionIds, DecoderId, DecoderIds, GruIds, ModelParams, ParamIds, ScorerIds,
};
pub use position::{cosine, predict_position, predict_position_with};
