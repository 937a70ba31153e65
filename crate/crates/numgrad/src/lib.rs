//! Dense `f64` tensors, a per-pass gradient tape, and a finite-difference checker.
//!
//! Parameters live in a [`ParamStore`]; a [`Tape`] borrows the store read-only,
//! records the forward computation, and `backward` adds parameter gradients
//! into a separate [`Gradients`] buffer. Separate threads may each run their
//! own tape over one shared store.

pub mod error;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{NumError, Result};
pub use gradcheck::{
    grad_check, grad_check_all, grad_check_floored, relative_error, relative_error_floored, GradCheckReport,
    DEFAULT_EPS, TINY,
};
pub use params::{sgd_step, Gradients, ParamId, ParamStore};
pub use tape::{log_softmax, sigmoid, softmax, softplus, Tape, Var};
pub use tensor::Tensor;
