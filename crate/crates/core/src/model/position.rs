use numgrad::Tensor;

use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab, UNK};

/// Cosine similarity; `−1` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return -1.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Position detector over an explicit embedding table: the 1-based index of
/// the response token most cosine-similar to `value`. Reserved tokens are
/// skipped and ties go to the earliest position.
pub fn predict_position_with(embeddings: &Tensor, response: &[TokenId], value: TokenId) -> Result<usize> {
    let target = embeddings.row(value)?;
    let mut best: Option<(usize, f64)> = None;
    for (j, &tok) in response.iter().enumerate() {
        if Vocab::is_reserved(tok) {
            continue;
        }
        let sim = cosine(embeddings.row(tok)?, target);
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((j + 1, sim));
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| Error::NoCandidate("response holds only reserved tokens".into()))
}

/// Position detector over the model's word embeddings.
///
/// An UNK `value` is accepted but logged, since its embedding says nothing
/// about the real value.
pub fn predict_position(params: &ModelParams, response: &[TokenId], value: TokenId) -> Result<usize> {
    if value == UNK {
        log::warn!("position detector called with an out-of-vocabulary profile value");
    }
    predict_position_with(params.store.get(params.ids.embed), response, value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[[f64; 3]]) -> Tensor {
        Tensor::matrix(rows.len(), 3, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn literal_value_wins() {
        let e = table(&[[0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3], [1.0, 0.2, 0.0], [0.3, 1.0, 0.0], [0.9, 0.1, 0.4]]);
        assert_eq!(predict_position_with(&e, &[4, 5, 6], 6).unwrap(), 3);
    }

    #[test]
    fn constructed_similarity_fixture() {
        // Value is id 7 = e₁; the token at position 2 has cos 0.9, the rest are orthogonal.
        let s = (1.0f64 - 0.81).sqrt();
        let e = table(&[
            [0.0; 3],
            [0.0; 3],
            [0.0; 3],
            [0.0; 3],
            [0.0, 1.0, 0.0],
            [0.9, s, 0.0],
            [0.0, 0.0, 2.0],
            [1.0, 0.0, 0.0],
        ]);
        assert!((cosine(e.row(5).unwrap(), e.row(7).unwrap()) - 0.9).abs() < 1e-12);
        assert_eq!(predict_position_with(&e, &[4, 5, 6], 7).unwrap(), 2);
    }

    #[test]
    fn ties_take_first_and_reserved_are_skipped() {
        let e = table(&[[0.0; 3], [5.0, 0.0, 0.0], [0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(predict_position_with(&e, &[1, 4, 5, 5, 4], 4).unwrap(), 2);
        assert!(matches!(
            predict_position_with(&e, &[0, 1, 2], 4),
            Err(Error::NoCandidate(_))
        ));
    }

    #[test]
    fn zero_vector_scores_minus_one() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), -1.0);
        let e = table(&[[0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        // Zero vector (cos −1) ties with the opposite vector; the earlier one wins.
        assert_eq!(predict_position_with(&e, &[4, 5], 6).unwrap(), 1);
    }
}
