//! Ground states of infinite one-dimensional lattice models with long-range
//! interactions, computed with an enhanced infinite matrix product state loop.

pub mod analysis;
pub mod eigensolver;
pub mod engine;
pub mod error;
pub mod mpo;
pub mod tensor;

pub use error::{ImpsError, Result};
