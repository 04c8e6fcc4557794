//! Numerical limit-type classification of formally symmetric ordinary
//! differential expressions on a half line.
//!
//! The pipeline runs coefficient strings through [`coeffdsl`], assembles a
//! [`expression::SymmetricExpression`], integrates `M[y] = λy` at `λ = ±i`
//! ([`integrate`]), detects square-integrable solution subspaces
//! ([`subspace`]) and combines the resulting deficiency indices with the
//! rank of limit brackets ([`classify`]).

pub mod bracket;
pub mod classify;
pub mod cli;
pub mod coeffdsl;
pub mod config;
pub mod error;
pub mod expression;
pub mod integrate;
pub mod linalg;
pub mod subspace;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, C64};
