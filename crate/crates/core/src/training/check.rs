//! Finite-difference check of the full training loss at toy sizes.

use numgrad::{grad_check_all, GradCheckReport, DEFAULT_EPS};

use super::loss::{total_loss, BatchItem};
use crate::corpus::TrainingPair;
use crate::error::Result;
use crate::model::{ModelConfig, ModelParams};
use crate::vocab::TokenId;

pub const TOY_VOCAB: usize = 20;
pub const TOY_KEYS: usize = 3;

/// Two pairs covering every loss term: a general pair trained on both decoder
/// paths, and a positive profile pair with gate and key labels.
pub fn toy_batch() -> Vec<BatchItem> {
    let general = TrainingPair {
        post: vec![4, 5, 6],
        response: vec![7, 8, 9, 10],
        z_label: Some(false),
        key_label: None,
        position_label: Some(2),
    };
    let profile = TrainingPair {
        post: vec![11, 12],
        response: vec![13, 14, 15],
        z_label: Some(true),
        key_label: Some(1),
        position_label: Some(3),
    };
    let mut gate = BatchItem::profile_binary(general.clone());
    gate.general = true;
    gate.bidirectional = true;
    let mut related = BatchItem::profile_related(profile);
    related.binary = true;
    vec![gate, related]
}

/// Profile value ids used with [`toy_batch`].
pub fn toy_profile_values() -> Vec<TokenId> {
    vec![16, 17, 18]
}

/// Denominator floor for the relative error. The loss is around 50 nats, so
/// central differences carry about 1e-9 of round-off; entries smaller than
/// the floor are judged on absolute error instead.
pub const TOY_FLOOR: f64 = 1e-5;

/// Compares autodiff and central differences for `L1 + α·L2` over every
/// parameter of a toy model.
pub fn toy_grad_check(seed: u64, alpha: f64) -> Result<GradCheckReport> {
    let config = ModelConfig::toy(TOY_VOCAB, TOY_KEYS);
    let mut params = ModelParams::init(&config, seed)?;
    let batch = toy_batch();
    let values = toy_profile_values();
    let template = params.clone();
    grad_check_all(&mut params.store, DEFAULT_EPS, TOY_FLOOR, |tape| {
        Ok(total_loss(tape, &template, &batch, &values, alpha)?.total)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_loss_gradients_match_finite_differences() {
        let report = toy_grad_check(3, 1.0).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        assert!(report.max_abs_error < 1e-8, "{report:?}");
        assert_eq!(report.entries_checked, ModelParams::init(&ModelConfig::toy(TOY_VOCAB, TOY_KEYS), 0).unwrap().store.num_elements());
    }
}
