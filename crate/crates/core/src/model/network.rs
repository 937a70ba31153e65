//! The differentiable building blocks, each recorded on a caller-owned tape.

use numgrad::{Tape, Tensor, Var};

use super::params::{DecoderId, GruIds, ModelParams};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Top-layer encoder states plus what the detectors and decoders read from them.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `h₁..hₙ` of the top layer.
    pub states: Vec<Var>,
    /// The same states stacked as `[n × hidden]`.
    pub matrix: Var,
    /// `Σⱼ hⱼ`, summed left to right.
    pub h_tilde: Var,
}

impl EncoderOutput {
    pub fn last(&self) -> Var {
        *self.states.last().expect("encoder output is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `r = σ(W_r x + U_r h + b_r)`, `z = σ(W_z x + U_z h + b_z)`,
/// `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = (1 − z) ⊙ h + z ⊙ n`.
pub fn gru_step(tape: &mut Tape<'_>, g: &GruIds, x: Var, h: Var) -> Result<Var> {
    let hidden = tape.shape(h)[0];
    let w_x = tape.param(g.w_x);
    let w_rz = tape.param(g.w_rz);
    let w_n = tape.param(g.w_n);
    let b_rz = tape.param(g.b_rz);
    let b_n = tape.param(g.b_n);

    let gx = tape.matmul(w_x, x)?;
    let gx_rz = tape.slice(gx, 0, 2 * hidden)?;
    let gx_n = tape.slice(gx, 2 * hidden, hidden)?;
    let gh_rz = tape.matmul(w_rz, h)?;
    let pre_rz = tape.add(gx_rz, gh_rz)?;
    let pre_rz = tape.add(pre_rz, b_rz)?;
    let rz = tape.sigmoid(pre_rz);
    let r = tape.slice(rz, 0, hidden)?;
    let z = tape.slice(rz, hidden, hidden)?;
    let rh = tape.mul(r, h)?;
    let gh_n = tape.matmul(w_n, rh)?;
    let pre_n = tape.add(gx_n, gh_n)?;
    let pre_n = tape.add(pre_n, b_n)?;
    let n = tape.tanh(pre_n);
    let delta = tape.sub(n, h)?;
    let step = tape.mul(z, delta)?;
    Ok(tape.add(h, step)?)
}

fn embedding(tape: &mut Tape<'_>, params: &ModelParams, token: TokenId) -> Result<Var> {
    let table = tape.param(params.ids.embed);
    Ok(tape.row(table, token)?)
}

pub fn encode(tape: &mut Tape<'_>, params: &ModelParams, post: &[TokenId]) -> Result<EncoderOutput> {
    let cfg = &params.config;
    if post.is_empty() {
        return Err(Error::Domain("cannot encode an empty post".into()));
    }
    if post.len() > cfg.max_len {
        return Err(Error::Domain(format!(
            "post of {} tokens exceeds max_len {}",
            post.len(),
            cfg.max_len
        )));
    }
    let mut inputs = post
        .iter()
        .map(|&t| embedding(tape, params, t))
        .collect::<Result<Vec<_>>>()?;
    for layer in &params.ids.encoder {
        let mut h = tape.constant(Tensor::zeros(&[cfg.hidden_dim]));
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in &inputs {
            h = gru_step(tape, layer, x, h)?;
            outputs.push(h);
        }
        inputs = outputs;
    }
    let matrix = tape.stack(&inputs)?;
    let mut h_tilde = inputs[0];
    for &h in &inputs[1..] {
        h_tilde = tape.add(h_tilde, h)?;
    }
    Ok(EncoderOutput {
        states: inputs,
        matrix,
        h_tilde,
    })
}

/// `W_p · h̃`; the gate probability is its sigmoid.
pub fn gate_logit(tape: &mut Tape<'_>, params: &ModelParams, enc: &EncoderOutput) -> Result<Var> {
    let w = tape.param(params.ids.gate_w);
    Ok(tape.dot(w, enc.h_tilde)?)
}

/// Unnormalized key scores `vᵀ tanh(W [h̃; kᵢ; vᵢ] + b)`, one per profile entry.
/// `values[i]` is the token id of the i-th profile value.
pub fn key_scores(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    enc: &EncoderOutput,
    values: &[TokenId],
) -> Result<Var> {
    if values.is_empty() {
        return Err(Error::Config("profile has no entries".into()));
    }
    if values.len() != params.config.num_keys {
        return Err(Error::Config(format!(
            "profile has {} entries, model was built for {}",
            values.len(),
            params.config.num_keys
        )));
    }
    let sel = params.ids.selector;
    let w = tape.param(sel.w);
    let b = tape.param(sel.b);
    let v = tape.param(sel.v);
    let keys = tape.param(params.ids.key_embed);
    let value_table = tape.param(params.value_table());
    let mut scores = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let k = tape.row(keys, i)?;
        let val = tape.row(value_table, value)?;
        let input = tape.concat(&[enc.h_tilde, k, val], 0)?;
        let pre = tape.matmul(w, input)?;
        let pre = tape.add(pre, b)?;
        let hidden = tape.tanh(pre);
        scores.push(tape.dot(v, hidden)?);
    }
    let scores = tape.concat(&scores, 0)?;
    Ok(tape.reshape(scores, &[values.len()])?)
}

/// Per-decode attention inputs that do not depend on the decoder state.
#[derive(Debug, Clone, Copy)]
pub struct AttnCache {
    /// `[n × attn]` projection of the encoder states.
    keys: Var,
    /// `[hidden × n]`.
    states_t: Var,
}

pub fn attention_cache(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    decoder: DecoderId,
    enc: &EncoderOutput,
) -> Result<AttnCache> {
    let w_enc = tape.param(params.ids.decoder(decoder).attn.w_enc);
    let keys = tape.matmul(enc.matrix, w_enc)?;
    let states_t = tape.transpose(enc.matrix)?;
    Ok(AttnCache { keys, states_t })
}

/// `αₜ ∝ exp(vᵀ tanh(W_h hₜ + W_s s + b))`, `c = Σₜ αₜ hₜ`. Returns `(c, α)`.
pub fn attend(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    decoder: DecoderId,
    cache: &AttnCache,
    state: Var,
) -> Result<(Var, Var)> {
    let ids = params.ids.decoder(decoder).attn;
    let w_state = tape.param(ids.w_state);
    let b = tape.param(ids.b);
    let v = tape.param(ids.v);
    let u = tape.matmul(w_state, state)?;
    let u = tape.add(u, b)?;
    let pre = tape.add_row(cache.keys, u)?;
    let act = tape.tanh(pre);
    let scores = tape.matmul(act, v)?;
    let alpha = tape.softmax(scores)?;
    let context = tape.matmul(cache.states_t, alpha)?;
    Ok((context, alpha))
}

/// Initial per-layer decoder states: an affine map of the last top-layer encoder state.
pub fn init_state(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    decoder: DecoderId,
    enc: &EncoderOutput,
) -> Result<Vec<Var>> {
    let ids = params.ids.decoder(decoder);
    let w = tape.param(ids.init_w);
    let b = tape.param(ids.init_b);
    let s = tape.matmul(w, enc.last())?;
    let s = tape.add(s, b)?;
    let h = params.config.hidden_dim;
    (0..params.config.num_layers)
        .map(|l| Ok(tape.slice(s, l * h, h)?))
        .collect()
}

/// One decoder step. Attention reads the previous top state; the output layer
/// sees `[s_new; E[prev]; c]`. Returns `(logits, new_state, α)`.
pub fn decoder_step(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    decoder: DecoderId,
    cache: &AttnCache,
    state: &[Var],
    prev: TokenId,
) -> Result<(Var, Vec<Var>, Var)> {
    let ids = params.ids.decoder(decoder);
    if state.len() != ids.layers.len() {
        return Err(Error::Contract(format!(
            "decoder state has {} layers, expected {}",
            state.len(),
            ids.layers.len()
        )));
    }
    let top = *state.last().expect("at least one layer");
    let (context, alpha) = attend(tape, params, decoder, cache, top)?;
    let emb = embedding(tape, params, prev)?;
    let mut x = tape.concat(&[emb, context], 0)?;
    let mut next = Vec::with_capacity(state.len());
    for (layer, &s) in ids.layers.iter().zip(state) {
        x = gru_step(tape, layer, x, s)?;
        next.push(x);
    }
    let out_in = tape.concat(&[x, emb, context], 0)?;
    let w = tape.param(ids.out_proj);
    let pb = tape.param(ids.out_proj_b);
    let query = tape.matmul(w, out_in)?;
    let query = tape.add(query, pb)?;
    let table = tape.param(params.ids.embed);
    let b = tape.param(ids.out_b);
    let logits = tape.matmul(table, query)?;
    let logits = tape.add(logits, b)?;
    Ok((logits, next, alpha))
}
