//! Deterministic solvers for the convex programs behind the bounds.
//!
//! All three share one reduction: the quadratic constraint
//! `(Zθ − v)ᵀ M (Zθ − v)` is diagonalized once, after which every program
//! collapses to monotone one-dimensional searches over Lagrange multipliers.
//! Each returned solution carries a stationarity residual computed against
//! the original `Z` and `M`, so the spectral shortcut is checked rather than
//! trusted.

mod average;
mod qcqp;
mod rkhs;
mod spectral;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use average::{solve_average_reward_program, AverageRewardProblem, AverageRewardSolution};
pub use qcqp::{solve_linear_qcqp, solve_min_norm_qcqp, QcqpPlan};
pub use rkhs::{build_exact_rkhs_program, KernelExpansion, RkhsProgram, RKHS_MAX_N};

/// Iteration budget of the outer multiplier search.
pub const DEFAULT_MAX_ITERS: usize = 10_000;
/// Relative feasibility tolerance for both constraints.
pub const FEAS_TOL: f64 = 1e-8;
/// Stationarity tolerance, relative to `|c|`.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

/// `max/min cᵀθ` subject to `(Zθ − target)ᵀ M (Zθ − target) ≤ lambda_k` and
/// `|θ|² ≤ ball_radius_sq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcqpProblem {
    pub c: Vec<f64>,
    pub z: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub target: Vec<f64>,
    pub lambda_k: f64,
    pub ball_radius_sq: f64,
    pub sense: Sense,
}

impl QcqpProblem {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.z.shape();
        if self.c.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: self.c.len() });
        }
        if self.m.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: self.m.nrows() });
        }
        if self.target.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.target.len() });
        }
        if !(self.lambda_k >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_k must be nonnegative, got {}", self.lambda_k)));
        }
        if !(self.ball_radius_sq > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be positive, got {}",
                self.ball_radius_sq
            )));
        }
        let asym = (&self.m - self.m.transpose()).amax();
        if asym > 1e-12 * self.m.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument("weight matrix is not symmetric".into()));
        }
        let finite = self.c.iter().chain(&self.target).all(|x| x.is_finite())
            && self.z.iter().chain(self.m.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("problem data contains non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveConstraints {
    pub quadratic: bool,
    pub ball: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcqpSolution {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub active_constraints: ActiveConstraints,
    pub iterations: usize,
    /// Multipliers of the quadratic constraint and of the ball.
    pub multipliers: [f64; 2],
    /// `(Zθ − target)ᵀ M (Zθ − target)` at the returned point.
    pub constraint_value: f64,
    /// Smallest attainable constraint value; set when the program is infeasible.
    pub min_constraint_value: Option<f64>,
}

impl QcqpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}
