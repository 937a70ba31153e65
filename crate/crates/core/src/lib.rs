pub mod corpus;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
