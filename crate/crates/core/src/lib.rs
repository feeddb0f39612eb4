//! RIS-aided localization and carrier-frequency-offset synchronization for a
//! single-antenna transmitter and receiver.
//!
//! The crate covers the full chain: geometry and steering vectors, coded RIS
//! phase schedules, signal synthesis (optionally with Rician multipath),
//! channel-parameter estimators for line-of-sight and blocked scenarios, a
//! GLRT line-of-sight detector, bearing-line localization, Fisher-information
//! bounds and a Monte-Carlo sweep harness that writes CSV.

pub mod bounds;
pub mod channel;
pub mod coding;
pub mod detection;
mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod localization;
pub mod model;
pub mod scenario;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;
/// Complex matrix.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
