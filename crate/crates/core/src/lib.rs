//! Identification and estimation for regressions with a misclassified,
//! endogenous binary regressor.
//!
//! Latent cells are indexed `(z, v)` in the fixed order `(0,0), (1,0), (0,1), (1,1)`.

pub mod dgp;
pub mod effects;
pub mod error;
pub mod ident2;
pub mod identk;
pub mod mde;
pub mod moments;
pub mod numeric;
pub mod tolerance;

pub use error::{Error, Result};
pub use tolerance::Tolerances;
