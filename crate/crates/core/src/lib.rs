//! Adaptive reduced-basis trust-region iteratively regularized Gauss-Newton
//! methods for identifying reaction or diffusion coefficients in 2D elliptic
//! problems from noisy state observations.
//!
//! Three interchangeable inversion algorithms are registered by name in
//! [`algorithm::AlgorithmRegistry`]:
//!
//! * `fom`   - full-order IRGNM,
//! * `qr`    - IRGNM on an adaptively enriched reduced parameter space,
//! * `qr-vr` - parameter and state reduced, error-aware trust-region IRGNM.

pub mod algorithm;
pub mod cg;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod forward;
pub mod irgnm;
pub mod param_reduction;
pub mod report;
pub mod state_reduction;
pub mod tr_irgnm;

pub use error::{Error, Result};
