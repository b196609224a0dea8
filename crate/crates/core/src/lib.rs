//! Desk-scale laboratory for fake-score-network-free distribution matching
//! distillation (FSF-DMD) of flow-map generators.
//!
//! Everything runs on analytically tractable low-dimensional Gaussian
//! mixtures, where scores, velocities and flow maps have closed forms or
//! brute-force oracles, so every identity the training objectives rely on is
//! checkable to tight tolerances.

pub mod error;
pub mod oracle;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
