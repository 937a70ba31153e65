//! Teacher-forced likelihoods and free-running generation for the three decoders.
//!
//! Conventions: the general decoder starts from BOS and ends with EOS. The
//! backward decoder starts from the anchor token and ends by emitting BOS.
//! The forward half first consumes the backward half in natural order and
//! then the anchor, and ends with EOS.

use numgrad::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{attention_cache, decoder_step, init_state, EncoderOutput};
use super::params::{DecoderId, ModelParams};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab, BOS, EOS, PAD, UNK};

/// `−log P^fr(y, EOS | x)` under teacher forcing.
pub fn fr_nll(tape: &mut Tape<'_>, params: &ModelParams, enc: &EncoderOutput, response: &[TokenId]) -> Result<Var> {
    let cache = attention_cache(tape, params, DecoderId::Fr, enc)?;
    let mut state = init_state(tape, params, DecoderId::Fr, enc)?;
    let mut prev = BOS;
    let mut terms = Vec::with_capacity(response.len() + 1);
    for &target in response.iter().chain(std::iter::once(&EOS)) {
        let (logits, next, _) = decoder_step(tape, params, DecoderId::Fr, &cache, &state, prev)?;
        terms.push(tape.cross_entropy(logits, target)?);
        state = next;
        prev = target;
    }
    sum_terms(tape, &terms)
}

/// `−log P^b(y_{t−1} … y_1, BOS | x, y_t) − log P^f(y_{t+1} … y_m, EOS | y_1 … y_t, x)`
/// with the anchor at 1-based `position`.
pub fn bi_nll(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    enc: &EncoderOutput,
    response: &[TokenId],
    position: usize,
) -> Result<Var> {
    if position == 0 || position > response.len() {
        return Err(Error::Contract(format!(
            "anchor position {position} outside 1..={}",
            response.len()
        )));
    }
    let t = position - 1;
    let mut terms = Vec::with_capacity(response.len() + 2);

    let cache = attention_cache(tape, params, DecoderId::Back, enc)?;
    let mut state = init_state(tape, params, DecoderId::Back, enc)?;
    let mut prev = response[t];
    for &target in response[..t].iter().rev().chain(std::iter::once(&BOS)) {
        let (logits, next, _) = decoder_step(tape, params, DecoderId::Back, &cache, &state, prev)?;
        terms.push(tape.cross_entropy(logits, target)?);
        state = next;
        prev = target;
    }

    let cache = attention_cache(tape, params, DecoderId::Fwd, enc)?;
    let mut state = init_state(tape, params, DecoderId::Fwd, enc)?;
    for &forced in &response[..t] {
        state = decoder_step(tape, params, DecoderId::Fwd, &cache, &state, forced)?.1;
    }
    let mut prev = response[t];
    for &target in response[t + 1..].iter().chain(std::iter::once(&EOS)) {
        let (logits, next, _) = decoder_step(tape, params, DecoderId::Fwd, &cache, &state, prev)?;
        terms.push(tape.cross_entropy(logits, target)?);
        state = next;
        prev = target;
    }
    sum_terms(tape, &terms)
}

pub(crate) fn sum_terms(tape: &mut Tape<'_>, terms: &[Var]) -> Result<Var> {
    let stacked = tape.concat(terms, 0)?;
    Ok(tape.sum(stacked))
}

/// How the next token is picked from the logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecodeMode {
    /// Argmax; ties go to the lowest token id.
    #[default]
    Greedy,
    Sample { seed: u64, temperature: f64 },
}

pub(crate) struct Chooser {
    mode: DecodeMode,
    rng: Option<ChaCha8Rng>,
}

impl Chooser {
    pub(crate) fn new(mode: DecodeMode) -> Result<Self> {
        let rng = match mode {
            DecodeMode::Greedy => None,
            DecodeMode::Sample { seed, temperature } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::Config(format!(
                        "sampling temperature must be positive, got {temperature}"
                    )));
                }
                Some(ChaCha8Rng::seed_from_u64(seed))
            }
        };
        Ok(Chooser { mode, rng })
    }

    /// Picks a token, never one of `banned`.
    pub(crate) fn choose(&mut self, logits: &[f64], banned: &[TokenId]) -> TokenId {
        let allowed = |i: usize| !banned.contains(&i);
        match (self.mode, self.rng.as_mut()) {
            (DecodeMode::Sample { temperature, .. }, Some(rng)) => {
                let max = logits
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| allowed(*i))
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if allowed(i) { ((v - max) / temperature).exp() } else { 0.0 })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut last = 0;
                for (i, w) in weights.iter().enumerate() {
                    if *w > 0.0 {
                        last = i;
                        if u < *w {
                            return i;
                        }
                        u -= w;
                    }
                }
                last
            }
            _ => {
                let mut best: Option<(usize, f64)> = None;
                for (i, &v) in logits.iter().enumerate() {
                    if allowed(i) && best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
                best.map_or(EOS, |(i, _)| i)
            }
        }
    }
}

/// Tokens produced by one decoder run with the attention used at each emitted step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Generated {
    pub tokens: Vec<TokenId>,
    pub attention: Vec<Vec<f64>>,
}

/// Free-running general decoder. `forced_prefix` tokens are emitted first
/// without consulting the logits; generation then continues until EOS or
/// `max_len` tokens in total.
pub(crate) fn forward_generate(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    enc: &EncoderOutput,
    chooser: &mut Chooser,
    forced_prefix: &[TokenId],
) -> Result<Generated> {
    let max_len = params.config.max_len;
    let cache = attention_cache(tape, params, DecoderId::Fr, enc)?;
    let mut state = init_state(tape, params, DecoderId::Fr, enc)?;
    let mut prev = BOS;
    let mut out = Generated::default();
    while out.tokens.len() < max_len {
        let (logits, next, alpha) = decoder_step(tape, params, DecoderId::Fr, &cache, &state, prev)?;
        state = next;
        let tok = match forced_prefix.get(out.tokens.len()) {
            Some(&t) => t,
            None => chooser.choose(tape.value(logits).data(), &[PAD, BOS]),
        };
        if tok == EOS {
            break;
        }
        out.tokens.push(tok);
        out.attention.push(tape.value(alpha).data().to_vec());
        prev = tok;
    }
    Ok(out)
}

/// Backward half (natural order) and forward half around `anchor`.
pub(crate) fn bidirectional_generate(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    enc: &EncoderOutput,
    anchor: TokenId,
    chooser: &mut Chooser,
) -> Result<(Generated, Generated)> {
    // UNK is allowed: it stands in for a profile value outside the vocabulary.
    if Vocab::is_reserved(anchor) && anchor != UNK {
        return Err(Error::Contract(format!("anchor token id {anchor} is reserved")));
    }
    let budget = params.config.max_len.saturating_sub(1);

    let cache = attention_cache(tape, params, DecoderId::Back, enc)?;
    let mut state = init_state(tape, params, DecoderId::Back, enc)?;
    let mut prev = anchor;
    let mut back = Generated::default();
    while back.tokens.len() < budget {
        let (logits, next, alpha) = decoder_step(tape, params, DecoderId::Back, &cache, &state, prev)?;
        state = next;
        let tok = chooser.choose(tape.value(logits).data(), &[PAD, EOS]);
        if tok == BOS {
            break;
        }
        back.tokens.push(tok);
        back.attention.push(tape.value(alpha).data().to_vec());
        prev = tok;
    }
    back.tokens.reverse();
    back.attention.reverse();

    let cache = attention_cache(tape, params, DecoderId::Fwd, enc)?;
    let mut state = init_state(tape, params, DecoderId::Fwd, enc)?;
    for &forced in &back.tokens {
        state = decoder_step(tape, params, DecoderId::Fwd, &cache, &state, forced)?.1;
    }
    let mut prev = anchor;
    let mut fwd = Generated::default();
    while fwd.tokens.len() < budget - back.tokens.len() {
        let (logits, next, alpha) = decoder_step(tape, params, DecoderId::Fwd, &cache, &state, prev)?;
        state = next;
        let tok = chooser.choose(tape.value(logits).data(), &[PAD, BOS]);
        if tok == EOS {
            break;
        }
        fwd.tokens.push(tok);
        fwd.attention.push(tape.value(alpha).data().to_vec());
        prev = tok;
    }
    Ok((back, fwd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_ties_pick_lowest_allowed_id() {
        let mut c = Chooser::new(DecodeMode::Greedy).unwrap();
        assert_eq!(c.choose(&[1.0, 3.0, 3.0, 0.0], &[]), 1);
        assert_eq!(c.choose(&[1.0, 3.0, 3.0, 0.0], &[1]), 2);
    }

    #[test]
    fn sampling_is_seeded_and_respects_bans() {
        let logits = [0.5, 0.1, 0.3, 0.2, 0.9];
        let draw = |seed| {
            let mut c = Chooser::new(DecodeMode::Sample { seed, temperature: 1.0 }).unwrap();
            (0..50).map(|_| c.choose(&logits, &[0, 4])).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert!(draw(3).iter().all(|t| ![0, 4].contains(t)));
        assert!(Chooser::new(DecodeMode::Sample { seed: 1, temperature: 0.0 }).is_err());
    }
}
