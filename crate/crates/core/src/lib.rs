//! Secure remote state estimation for multi-sensor linear systems.
//!
//! A process `x(t+1) = A x(t) + w(t)` is observed by `N` sensors, each
//! contributing `k` rows of `y(t) = C x(t) + v(t)`, with `w ~ N(0, Q)` and
//! `v ~ N(0, R)`. Up to `n0 < N` sensors may be compromised by a false data
//! injection attacker that flips innovations to stay invisible to residue
//! tests while poisoning the estimate.
//!
//! The crate provides:
//!
//! - [`process_model`]: model container, random instance generation, and
//!   trajectory simulation.
//! - [`kalman`]: the optimal filter, steady-state (Riccati) quantities, and
//!   the covariance recursion for arbitrary constant gains.
//! - [`attack`]: innovation-flipping attack construction, with known-estimate
//!   and proxy-filter variants, plus static and switching sensor schedules.
//! - [`sec`]: the adaptive-gain estimator. A simultaneous-perturbation
//!   gradient scheme tunes the gain online to minimise a subset-anomaly cost
//!   regularised by the (attack-free) error covariance trace, with an
//!   optional slow timescale that adapts the regularisation weight to meet a
//!   covariance budget. Handles partial observation (packet loss).
//! - [`detect`]: the subset-discrepancy detector with per-subset localisation,
//!   windowed chi-square and safe-sensor baselines, and the stochastic
//!   threshold tuner that meets a target false alarm rate.
//! - [`harness`]: seeded, paired-stream experiments comparing estimators and
//!   detectors, with CSV/JSON reporting.

pub mod attack;
pub mod detect;
pub mod error;
pub mod harness;
pub mod kalman;
pub mod linalg;
pub mod process_model;
pub mod schedule;
pub mod sec;
pub mod subsets;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
