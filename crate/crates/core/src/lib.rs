//! Monte Carlo privacy accounting for balanced iteration subsampling (BIS).
//!
//! Under BIS every example takes part in exactly `k` of the `T` training
//! iterations, the `k`-subset drawn uniformly at random. This crate estimates
//! the hockey-stick divergence between the output distributions of two
//! zero-out neighbouring datasets by sampling mechanism outputs and
//! evaluating their exact likelihood ratio, and searches for the smallest
//! noise multiplier that meets an `(epsilon, delta)` target.
//!
//! The main entry points:
//!
//! * [`likelihood`]: exact `O(Tk)` log-likelihood ratio and the `O(T)`
//!   screening bound.
//! * [`accountant`]: screen-then-exact Monte Carlo estimation of `delta`.
//! * [`search`]: line search for the minimum noise multiplier.
//! * [`asymptotics`]: closed-form low/high-noise expansions and the
//!   analytic Gaussian mechanism, used as convergence diagnostics.
//! * [`oracle`]: brute-force and quadrature references for testing.

pub mod accountant;
pub mod asymptotics;
pub mod error;
pub mod likelihood;
pub mod oracle;
pub mod record;
pub mod sampling;
pub mod search;
pub mod shape;
pub mod validate;

pub use accountant::{estimate_delta, verify, AccountingConfig, DeltaEstimate};
pub use error::{Error, Result};
pub use likelihood::{exact_log_ratio, screening_log_ratio, LogLikelihoodRatio, LogWeightVector};
pub use search::{find_min_sigma, NoiseSearchResult, SearchMode};
pub use shape::MechanismShape;

/// Version string stamped into every emitted record.
pub const ARTIFACT_VERSION: &str = concat!("bis-accountant/", env!("CARGO_PKG_VERSION"));
