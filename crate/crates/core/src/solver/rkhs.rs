use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{QcqpProblem, Sense};
use crate::features::{dedup_points, scaled_gram, RbfKernel, StateActionEncoder};
use crate::mdp::{Dataset, Policy, State};
use crate::{Error, Result};

/// Largest dataset accepted by the exact kernel program.
pub const RKHS_MAX_N: usize = 500;

/// A finite combination `Σ w_t K(·, p_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub terms: Vec<(f64, Vec<f64>)>,
}

impl KernelExpansion {
    pub fn inner(&self, other: &KernelExpansion, kernel: &RbfKernel) -> f64 {
        let mut acc = crate::numeric::CompensatedSum::new();
        for (w, p) in &self.terms {
            for (v, q) in &other.terms {
                acc.add(w * v * kernel.eval(p, q));
            }
        }
        acc.value()
    }

    pub fn eval(&self, x: &[f64], kernel: &RbfKernel) -> f64 {
        self.terms.iter().map(|(w, p)| w * kernel.eval(p, x)).sum()
    }
}

/// The kernel-space program over `α ∈ R^{n+1}` with `Q = Σ_j α_j f_j`, where
/// `f_0` represents the initial-state average and `f_i` the Bellman
/// representer of transition `i`.
///
/// In `α` the program reads `max/min cᵀα` subject to
/// `αᵀ A α + 2 bᵀα + d ≤ λ_K` and `αᵀ B α ≤ ρ`. `whitened` is the same
/// program in coordinates `β = Λ^{1/2} Vᵀ α` of `B = V Λ Vᵀ`, ready for the
/// linear QCQP solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsProgram {
    pub gram: DMatrix<f64>,
    pub quad: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub objective: Vec<f64>,
    pub offset: f64,
    pub lambda_k: f64,
    pub rho: f64,
    pub expansions: Vec<KernelExpansion>,
    pub whitened: QcqpProblem,
    alpha_map: DMatrix<f64>,
}

impl RkhsProgram {
    /// Maps whitened coordinates back to `α`.
    pub fn alpha(&self, beta: &[f64]) -> Vec<f64> {
        (&self.alpha_map * DVector::from_column_slice(beta)).iter().copied().collect()
    }

    /// `Q(x) = Σ_j α_j f_j(x)`.
    pub fn q_value(&self, alpha: &[f64], x: &[f64], kernel: &RbfKernel) -> f64 {
        alpha.iter().zip(&self.expansions).map(|(a, f)| a * f.eval(x, kernel)).sum()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_exact_rkhs_program(
    dataset: &Dataset,
    policy: &Policy,
    gamma: f64,
    kf: &RbfKernel,
    init_sample: &[(State, usize)],
    kernel: &RbfKernel,
    encoder: &StateActionEncoder,
    lambda_k: f64,
    rho: f64,
) -> Result<RkhsProgram> {
    let n = dataset.len();
    if n > RKHS_MAX_N {
        return Err(Error::TooLarge { n, cap: RKHS_MAX_N });
    }
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    if init_sample.is_empty() {
        return Err(Error::Empty("initial-state sample"));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }

    let init_points: Vec<Vec<f64>> = init_sample.iter().map(|(s, a)| encoder.encode(s, *a)).collect();
    let n_init = init_points.len() as f64;
    let mut expansions = vec![KernelExpansion {
        terms: dedup_points(&init_points)
            .into_iter()
            .map(|(count, p)| (count as f64 / n_init, p))
            .collect(),
    }];
    for t in &dataset.transitions {
        let mut terms = vec![(1.0, encoder.encode(&t.s, t.a))];
        for (a, p) in policy.action_probs(&t.sn).into_iter().enumerate() {
            if p != 0.0 && gamma != 0.0 {
                terms.push((-gamma * p, encoder.encode(&t.sn, a)));
            }
        }
        expansions.push(KernelExpansion { terms });
    }

    let dim = n + 1;
    let mut gram = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let v = expansions[i].inner(&expansions[j], kf);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }

    let points: Vec<Vec<f64>> = dataset.transitions.iter().map(|t| encoder.encode(&t.s, t.a)).collect();
    let m = scaled_gram(kernel, &points);
    let r = DVector::from_iterator(n, dataset.transitions.iter().map(|t| t.r));
    let b1 = gram.rows(1, n).into_owned();
    let quad = b1.tr_mul(&(&m * &b1));
    let linear: Vec<f64> = (-(b1.tr_mul(&(&m * &r)))).iter().copied().collect();
    let offset = r.dot(&(&m * &r));
    let objective: Vec<f64> = gram.column(0).iter().copied().collect();

    let eig = SymmetricEigen::new(gram.clone());
    let lmax = eig.eigenvalues.max().max(0.0);
    let keep: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] > 1e-12 * lmax).collect();
    let p = keep.len();
    let factor = DMatrix::from_fn(dim, p, |i, k| {
        let idx = keep[k];
        eig.eigenvectors[(i, idx)] * eig.eigenvalues[idx].sqrt()
    });
    let alpha_map = DMatrix::from_fn(dim, p, |i, k| {
        let idx = keep[k];
        eig.eigenvectors[(i, idx)] / eig.eigenvalues[idx].sqrt()
    });
    let whitened = QcqpProblem {
        c: factor.row(0).iter().copied().collect(),
        z: factor.rows(1, n).into_owned(),
        m,
        target: r.iter().copied().collect(),
        lambda_k,
        ball_radius_sq: rho,
        sense: Sense::Maximize,
    };
    Ok(RkhsProgram {
        gram,
        quad,
        linear,
        objective,
        offset,
        lambda_k,
        rho,
        expansions,
        whitened,
        alpha_map,
    })
}
