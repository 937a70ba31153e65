//! Central-difference verification of tape gradients.

use crate::error::NumError;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tape::{Tape, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
/// Smallest denominator used by [`relative_error`].
pub const TINY: f64 = 1e-12;

/// Worst disagreement found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, TINY)
}

/// `|a − n| / max(|a|, |n|, floor)`. A floor near the finite-difference
/// round-off level keeps near-zero entries from dominating the maximum.
pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares autodiff gradients of the scalar built by `f` against
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every entry of the listed parameters.
///
/// `f` must be deterministic: it is evaluated twice up front and the two
/// results must agree bit for bit.
pub fn grad_check<F, E>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    f: F,
) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<'_>) -> std::result::Result<Var, E>,
    E: From<NumError>,
{
    grad_check_floored(store, ids, eps, TINY, f)
}

/// [`grad_check`] with [`relative_error_floored`] as the metric.
pub fn grad_check_floored<F, E>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    floor: f64,
    f: F,
) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<'_>) -> std::result::Result<Var, E>,
    E: From<NumError>,
{
    let eval = |store: &ParamStore| -> std::result::Result<f64, E> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss)?)
    };

    let first = eval(store)?;
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumError::Determinism { first, second }.into());
    }

    let mut grads = Gradients::for_store(store);
    {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss, &mut grads)?;
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for &id in ids {
        for i in 0..store.get(id).len() {
            let original = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = original + eps;
            let plus = eval(store);
            store.get_mut(id).data_mut()[i] = original - eps;
            let minus = eval(store);
            store.get_mut(id).data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = grads.get(id).data()[i];
            let err = relative_error_floored(analytic, numeric, floor);
            report.entries_checked += 1;
            report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((store.name(id).to_string(), i));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Same as [`grad_check_floored`] over every parameter in the store.
pub fn grad_check_all<F, E>(
    store: &mut ParamStore,
    eps: f64,
    floor: f64,
    f: F,
) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<'_>) -> std::result::Result<Var, E>,
    E: From<NumError>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check_floored(store, &ids, eps, floor, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::cell::Cell;

    #[test]
    fn quadratic_probe() {
        let mut store = ParamStore::new();
        let w = store
            .insert("w", Tensor::vector(vec![0.3, -1.2, 2.5]))
            .unwrap();
        let report = grad_check(&mut store, &[w], DEFAULT_EPS, |tape| {
            let v = tape.param(w);
            let sq = tape.mul(v, v)?;
            let s = tape.scale(sq, 1.5);
            Ok::<_, NumError>(tape.sum(s))
        })
        .unwrap();
        assert_eq!(report.entries_checked, 3);
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let calls = Cell::new(0.0);
        let err = grad_check(&mut store, &[w], DEFAULT_EPS, |tape| {
            calls.set(calls.get() + 1.0);
            let v = tape.param(w);
            let s = tape.scale(v, calls.get());
            Ok::<_, NumError>(tape.sum(s))
        })
        .unwrap_err();
        assert!(matches!(err, NumError::Determinism { .. }));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
