//! Empirical Bellman residuals, kernel Bellman U/V-statistics and the
//! concentration thresholds used to calibrate the feasible Q-function set.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::features::{RbfKernel, StateActionEncoder};
use crate::mdp::{ActionValue, Dataset, Policy, State, TabularMDP, Transition};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualMode {
    Discounted,
    Average { eta_guess: f64 },
}

/// One empirical residual per transition of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector {
    pub values: Vec<f64>,
    pub q_ref: String,
    pub gamma: f64,
    pub mode: ResidualMode,
}

impl ResidualVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Expected-Sarsa residual `r + γ Σ_a π(a|s') Q(s', a) − Q(s, a)`.
pub fn empirical_residual(q: &dyn ActionValue, tau: &Transition, policy: &Policy, gamma: f64) -> f64 {
    tau.r + gamma * q.expected_value(&tau.sn, policy) - q.value(&tau.s, tau.a)
}

/// `r + Σ_a π(a|s') Q(s', a) − η − Q(s, a)`.
pub fn average_residual(q: &dyn ActionValue, eta_guess: f64, tau: &Transition, policy: &Policy) -> f64 {
    tau.r + q.expected_value(&tau.sn, policy) - eta_guess - q.value(&tau.s, tau.a)
}

pub fn residual_vector(q: &dyn ActionValue, dataset: &Dataset, policy: &Policy, gamma: f64) -> ResidualVector {
    ResidualVector {
        values: dataset
            .transitions
            .iter()
            .map(|t| empirical_residual(q, t, policy, gamma))
            .collect(),
        q_ref: String::new(),
        gamma,
        mode: ResidualMode::Discounted,
    }
}

pub fn average_residual_vector(q: &dyn ActionValue, eta_guess: f64, dataset: &Dataset, policy: &Policy) -> ResidualVector {
    ResidualVector {
        values: dataset
            .transitions
            .iter()
            .map(|t| average_residual(q, eta_guess, t, policy))
            .collect(),
        q_ref: String::new(),
        gamma: 1.0,
        mode: ResidualMode::Average { eta_guess },
    }
}

/// Encoded `(s_i, a_i)` for every transition.
pub fn dataset_points(encoder: &StateActionEncoder, dataset: &Dataset) -> Vec<Vec<f64>> {
    dataset.transitions.iter().map(|t| encoder.encode(&t.s, t.a)).collect()
}

fn check_dims(res: &[f64], gram: &DMatrix<f64>) -> Result<()> {
    if gram.nrows() != res.len() || gram.ncols() != res.len() {
        return Err(Error::DimensionMismatch {
            expected: res.len(),
            got: gram.nrows(),
        });
    }
    Ok(())
}

/// `(1/n²) Σ_{i,j} res_i K_ij res_j` with `K` unscaled.
pub fn v_statistic(res: &[f64], gram: &DMatrix<f64>) -> Result<f64> {
    check_dims(res, gram)?;
    if res.is_empty() {
        return Err(Error::Empty("residual vector"));
    }
    let n = res.len();
    let (off, diag) = pair_sums(res, gram);
    Ok((off + diag) / (n * n) as f64)
}

/// `(1/(n(n−1))) Σ_{i≠j} res_i K_ij res_j`; can be negative.
pub fn u_statistic(res: &[f64], gram: &DMatrix<f64>) -> Result<f64> {
    check_dims(res, gram)?;
    let n = res.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("U-statistic needs at least 2 residuals, got {n}")));
    }
    let (off, _) = pair_sums(res, gram);
    Ok(off / (n * (n - 1)) as f64)
}

/// Off-diagonal and diagonal sums of `res_i K_ij res_j`.
fn pair_sums(res: &[f64], gram: &DMatrix<f64>) -> (f64, f64) {
    let mut off = CompensatedSum::new();
    let mut diag = CompensatedSum::new();
    for j in 0..res.len() {
        for i in 0..res.len() {
            let term = res[i] * gram[(i, j)] * res[j];
            if i == j {
                diag.add(term);
            } else {
                off.add(term);
            }
        }
    }
    (off.value(), diag.value())
}

/// Exact `L_K(Q) = Σ_{x, x̄} μ(x) μ(x̄) R_πQ(x) K(x, x̄) R_πQ(x̄)` on a tabular MDP,
/// with `mu[s][a]` the sampling distribution.
pub fn exact_kernel_loss(
    q: &dyn ActionValue,
    mdp: &TabularMDP,
    policy: &Policy,
    mu: &[Vec<f64>],
    kernel: &RbfKernel,
    encoder: &StateActionEncoder,
) -> f64 {
    let resid = mdp.bellman_residual(q, policy);
    let (points, weights): (Vec<Vec<f64>>, Vec<f64>) = sa_pairs(mdp)
        .map(|(s, a)| (encoder.encode(&State::Discrete(s), a), mu[s][a] * resid.0[s][a]))
        .unzip();
    let mut sum = CompensatedSum::new();
    for i in 0..points.len() {
        for j in 0..points.len() {
            sum.add(weights[i] * kernel.eval(&points[i], &points[j]) * weights[j]);
        }
    }
    sum.value()
}

fn sa_pairs(mdp: &TabularMDP) -> impl Iterator<Item = (usize, usize)> {
    let na = mdp.n_actions();
    (0..mdp.n_states()).flat_map(move |s| (0..na).map(move |a| (s, a)))
}

/// `E[K(x, x̄) R̂Q(τ) R̂Q(τ̄)]` where `(x, x̄) ~ joint_nu` and the two next states
/// are drawn independently from `P(·|x)` and `P(·|x̄)`. Computed by enumerating
/// every `(x, x̄, s', s̄')`. `joint_nu` is indexed by flattened `s * |A| + a`.
/// Vanishes for any `joint_nu` when `q` is the exact value function.
pub fn degenerate_expectation_check(
    mdp: &TabularMDP,
    policy: &Policy,
    q: &dyn ActionValue,
    joint_nu: &DMatrix<f64>,
    kernel: &RbfKernel,
    encoder: &StateActionEncoder,
) -> f64 {
    let ns = mdp.n_states();
    let k_sa = ns * mdp.n_actions();
    assert_eq!((joint_nu.nrows(), joint_nu.ncols()), (k_sa, k_sa), "joint measure shape");
    let next_v: Vec<f64> = (0..ns)
        .map(|s| q.expected_value(&State::Discrete(s), policy))
        .collect();
    let pairs: Vec<(usize, usize)> = sa_pairs(mdp).collect();
    let points: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(s, a)| encoder.encode(&State::Discrete(s), a))
        .collect();
    // residual of transition (s, a) -> s'
    let sample_resid = |s: usize, a: usize, sn: usize| mdp.r[s][a] + mdp.gamma * next_v[sn] - q.value(&State::Discrete(s), a);
    let mut total = CompensatedSum::new();
    for (i, &(s, a)) in pairs.iter().enumerate() {
        for (j, &(sb, ab)) in pairs.iter().enumerate() {
            let w = joint_nu[(i, j)];
            if w == 0.0 {
                continue;
            }
            let k = kernel.eval(&points[i], &points[j]);
            for sn in 0..ns {
                let p = mdp.transition[s][a][sn];
                if p == 0.0 {
                    continue;
                }
                let ri = sample_resid(s, a, sn);
                for snb in 0..ns {
                    let pb = mdp.transition[sb][ab][snb];
                    if pb != 0.0 {
                        total.add(w * p * pb * k * ri * sample_resid(sb, ab, snb));
                    }
                }
            }
        }
    }
    total.value()
}

/// `4 K_max r_max² / (1 − γ)²`.
pub fn ell_max_discounted(r_max: f64, k_max: f64, gamma: f64) -> f64 {
    4.0 * k_max * r_max * r_max / ((1.0 - gamma) * (1.0 - gamma))
}

/// `4 K_max (Q_max + r_max)²`.
pub fn ell_max_average(r_max: f64, q_max: f64, k_max: f64) -> f64 {
    4.0 * k_max * (q_max + r_max).powi(2)
}

/// Threshold for the V-statistic at the true value function:
/// `2 ℓ_max ((n−1)/n · √(log(2/δ)/n) + 1/n)`.
pub fn lambda_k_vstat(ell_max: f64, n: usize, delta: f64) -> f64 {
    let n = n as f64;
    2.0 * ell_max * ((n - 1.0) / n * ((2.0 / delta).ln() / n).sqrt() + 1.0 / n)
}

/// Hoeffding radius for the initial-state Monte Carlo average: `Q_max √(2 log(2/δ)/N)`.
pub fn lambda_eta(q_max: f64, n_init: usize, delta: f64) -> f64 {
    q_max * (2.0 * (2.0 / delta).ln() / n_init as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationBudget {
    pub ell_max: f64,
    pub lambda_k: f64,
    pub lambda_eta: f64,
    pub delta: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub n_init: usize,
    pub q_max: f64,
}

fn check_budget_args(n: usize, delta: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

impl ConcentrationBudget {
    /// Discounted setting with `Q_max = r_max / (1 − γ)`.
    pub fn discounted(r_max: f64, gamma: f64, k_max: f64, n: usize, n_init: usize, delta: f64) -> Result<Self> {
        check_budget_args(n, delta)?;
        if n_init == 0 {
            return Err(Error::Empty("initial-state sample"));
        }
        if !(gamma > 0.0 && gamma < 1.0) && gamma != 0.0 {
            return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        let q_max = r_max / (1.0 - gamma);
        let ell_max = ell_max_discounted(r_max, k_max, gamma);
        Ok(ConcentrationBudget {
            ell_max,
            lambda_k: lambda_k_vstat(ell_max, n, delta),
            lambda_eta: lambda_eta(q_max, n_init, delta),
            delta,
            n,
            n_init,
            q_max,
        })
    }

    /// Average-reward setting; the gain is bounded directly so `lambda_eta = 0`.
    pub fn average(r_max: f64, q_max: f64, k_max: f64, n: usize, delta: f64) -> Result<Self> {
        check_budget_args(n, delta)?;
        let ell_max = ell_max_average(r_max, q_max, k_max);
        Ok(ConcentrationBudget {
            ell_max,
            lambda_k: lambda_k_vstat(ell_max, n, delta),
            lambda_eta: 0.0,
            delta,
            n,
            n_init: 0,
            q_max,
        })
    }
}
