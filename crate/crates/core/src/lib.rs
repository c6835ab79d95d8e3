//! Confidence bounds for off-policy evaluation built on kernel Bellman
//! statistics.
//!
//! Given transitions `(s, a, r, s')` collected by an unknown behavior policy,
//! the crate brackets the expected discounted reward of a target policy by
//! optimizing over a norm ball of Q-functions whose empirical kernel Bellman
//! loss stays below a concentration threshold. The same machinery wraps an
//! existing Q estimator with post-hoc bounds and a minimum-norm correction.
//!
//! Module map:
//!
//! - [`mdp`]: environments, policies, transition sampling and exact oracles.
//! - [`features`]: RBF kernels and random Fourier feature maps.
//! - [`bellman`]: empirical residuals, U/V-statistics and concentration constants.
//! - [`solver`]: the convex programs (linear QCQP, min-norm QCQP, average reward, exact RKHS).
//! - [`ope`]: the end-to-end bound and diagnosis procedures.
//! - [`baseline`]: truncated importance sampling lower bound for comparison.

pub mod baseline;
pub mod bellman;
mod error;
pub mod features;
pub mod mdp;
pub mod numeric;
pub mod ope;
pub mod solver;

pub use error::{Error, Result};
