//! Generation loss L1, detector loss L2 and their weighted sum.
//!
//! Every function records onto a caller-owned tape and sums over the batch,
//! so one batch and the same items split into singletons give the same total.

use numgrad::{Tape, Tensor, Var};

use crate::corpus::TrainingPair;
use crate::error::{Error, Result};
use crate::model::{bi_nll, encode, fr_nll, gate_logit, key_scores, sum_terms, ModelParams};
use crate::vocab::TokenId;

/// One pair and the loss terms it contributes to.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub pair: TrainingPair,
    /// General forward decoder likelihood.
    pub general: bool,
    /// Bidirectional likelihood anchored at `pair.position_label`.
    pub bidirectional: bool,
    /// Gate term, needs `pair.z_label`.
    pub binary: bool,
    /// Key-selection term, needs `pair.key_label`.
    pub key: bool,
}

impl BatchItem {
    pub fn general(pair: TrainingPair) -> Self {
        BatchItem { pair, general: true, bidirectional: false, binary: false, key: false }
    }

    /// Stage-1 pair: general decoder plus bidirectional decoder at the pair's anchor.
    pub fn general_bidirectional(pair: TrainingPair) -> Self {
        BatchItem { pair, general: true, bidirectional: true, binary: false, key: false }
    }

    /// Profile-related pair: bidirectional decoder plus key selection.
    pub fn profile_related(pair: TrainingPair) -> Self {
        BatchItem { pair, general: false, bidirectional: true, binary: false, key: true }
    }

    /// Gate-labeled pair.
    pub fn profile_binary(pair: TrainingPair) -> Self {
        BatchItem { pair, general: false, bidirectional: false, binary: true, key: false }
    }

    /// Number of predicted tokens in this item's L1 terms (EOS/BOS included).
    pub fn l1_tokens(&self) -> usize {
        let per_chain = self.pair.response.len() + 1;
        per_chain * (self.general as usize + self.bidirectional as usize)
    }

    fn needs_generation(&self) -> bool {
        self.general || self.bidirectional
    }

    fn needs_detector(&self) -> bool {
        self.binary || self.key
    }
}

/// Scalar L1, L2 and total recorded on the tape, with their values.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: Var,
    pub l1: f64,
    pub l2: f64,
}

fn zero(tape: &mut Tape<'_>) -> Var {
    tape.constant(Tensor::scalar(0.0))
}

fn generation_terms(tape: &mut Tape<'_>, params: &ModelParams, item: &BatchItem, enc: &crate::model::EncoderOutput, out: &mut Vec<Var>) -> Result<()> {
    let response = &item.pair.response;
    if item.general {
        out.push(fr_nll(tape, params, enc, response)?);
    }
    if item.bidirectional {
        let position = item.pair.position_label.ok_or_else(|| {
            Error::Contract("profile-related pair has no anchor position; run the position detector first".into())
        })?;
        out.push(bi_nll(tape, params, enc, response, position)?);
    }
    Ok(())
}

fn detector_terms(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    profile_values: &[TokenId],
    item: &BatchItem,
    enc: &crate::model::EncoderOutput,
    out: &mut Vec<Var>,
) -> Result<()> {
    if item.binary {
        let z = item
            .pair
            .z_label
            .ok_or_else(|| Error::Contract("gate-labeled pair has no z label".into()))?;
        let logit = gate_logit(tape, params, enc)?;
        out.push(tape.bce_with_logit(logit, z)?);
    }
    if item.key {
        let k = item
            .pair
            .key_label
            .ok_or_else(|| Error::Contract("profile-related pair has no key label".into()))?;
        let scores = key_scores(tape, params, enc, profile_values)?;
        out.push(tape.cross_entropy(scores, k)?);
    }
    Ok(())
}

/// `L1 = −Σ log P^fr(y|x) − Σ log P^bi(y|x, ṽ)` over the batch.
pub fn loss_generation(tape: &mut Tape<'_>, params: &ModelParams, batch: &[BatchItem]) -> Result<Var> {
    let mut terms = Vec::new();
    for item in batch.iter().filter(|i| i.needs_generation()) {
        let enc = encode(tape, params, &item.pair.post)?;
        generation_terms(tape, params, item, &enc, &mut terms)?;
    }
    if terms.is_empty() {
        return Ok(zero(tape));
    }
    sum_terms(tape, &terms)
}

/// `L2 = −Σ log P(z|x) − Σ log β_k̂` over the batch.
pub fn loss_detector(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    batch: &[BatchItem],
    profile_values: &[TokenId],
) -> Result<Var> {
    let mut terms = Vec::new();
    for item in batch.iter().filter(|i| i.needs_detector()) {
        let enc = encode(tape, params, &item.pair.post)?;
        detector_terms(tape, params, profile_values, item, &enc, &mut terms)?;
    }
    if terms.is_empty() {
        return Ok(zero(tape));
    }
    sum_terms(tape, &terms)
}

/// `L = L1 + α·L2`, encoding each post once. With `alpha == 0` the detector
/// terms are not built at all and the total is exactly L1.
pub fn total_loss(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    batch: &[BatchItem],
    profile_values: &[TokenId],
    alpha: f64,
) -> Result<LossBreakdown> {
    let mut gen = Vec::new();
    let mut det = Vec::new();
    for item in batch {
        let wants_detector = alpha != 0.0 && item.needs_detector();
        if !item.needs_generation() && !wants_detector {
            continue;
        }
        let enc = encode(tape, params, &item.pair.post)?;
        generation_terms(tape, params, item, &enc, &mut gen)?;
        if wants_detector {
            detector_terms(tape, params, profile_values, item, &enc, &mut det)?;
        }
    }
    let l1 = if gen.is_empty() { zero(tape) } else { sum_terms(tape, &gen)? };
    let l1_value = tape.scalar(l1)?;
    if det.is_empty() {
        return Ok(LossBreakdown { total: l1, l1: l1_value, l2: 0.0 });
    }
    let l2 = sum_terms(tape, &det)?;
    let l2_value = tape.scalar(l2)?;
    let weighted = tape.scale(l2, alpha);
    let total = tape.add(l1, weighted)?;
    Ok(LossBreakdown { total, l1: l1_value, l2: l2_value })
}
