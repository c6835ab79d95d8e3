//! End-to-end interval estimation for a target policy.
//!
//! [`confidence_bounds`] optimizes `η̂(Q)` over every Q in a random-feature
//! ball whose empirical kernel Bellman loss is below `λ_K`, and widens the
//! result by the initial-state sampling radius `λ_η`. [`posthoc_bounds`] and
//! [`debias`] do the same around an existing estimator, and
//! [`average_reward_bounds`] handles the undiscounted gain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bellman::{dataset_points, ConcentrationBudget};
use crate::features::{
    dedup_points, make_rff_with_scale, median_bandwidth, scaled_gram, FeatureMap, QFunction, RbfKernel,
    StateActionEncoder, RBF_K_MAX,
};
use crate::mdp::{sample_categorical, seeded_rng, ActionValue, Dataset, Environment, Policy, State, StateSpace};
use crate::solver::{
    solve_average_reward_program, ActiveConstraints, AverageRewardProblem, QcqpPlan, QcqpProblem, QcqpSolution,
    Sense, SolveStatus,
};
use crate::{Error, Result};

pub const DEFAULT_N_INIT: usize = 10_000;
pub const DEFAULT_KERNEL_BANDWIDTH: f64 = 0.5;

/// Bandwidth of the loss kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelBandwidth {
    Fixed(f64),
    /// Median pairwise distance of the encoded dataset points.
    Median,
}

impl Default for KernelBandwidth {
    fn default() -> Self {
        KernelBandwidth::Fixed(DEFAULT_KERNEL_BANDWIDTH)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub m: usize,
    pub h0: f64,
    pub seed: u64,
    /// `√2` amplitude (true) or plain cosines (false).
    #[serde(default = "yes")]
    pub scaled: bool,
}

fn yes() -> bool {
    true
}

fn default_n_init() -> usize {
    DEFAULT_N_INIT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    #[default]
    Discounted,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub gamma: f64,
    pub delta: f64,
    /// Squared RKHS-norm budget of the hypothesis ball.
    pub rho: f64,
    #[serde(default = "default_n_init")]
    pub n_init_samples: usize,
    #[serde(default)]
    pub kernel_bandwidth: KernelBandwidth,
    pub features: FeatureSpec,
    /// Candidate feature bandwidths for the pessimistic ensemble.
    #[serde(default)]
    pub h0_candidates: Vec<f64>,
    pub r_max: f64,
    #[serde(default)]
    pub mode: BoundsMode,
    /// Bound on `|Q|` for the average-reward loss constant; defaults to the
    /// largest value a function in the ball can take.
    #[serde(default)]
    pub q_max: Option<f64>,
    /// Split `δ` evenly across ensemble candidates.
    #[serde(default)]
    pub bonferroni: bool,
    /// Also report the bounds divided by `1 − γ`.
    #[serde(default)]
    pub report_normalized: bool,
}

impl BoundsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.rho > 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        if self.n_init_samples == 0 {
            return Err(Error::InvalidArgument("n_init_samples must be at least 1".into()));
        }
        if !(self.r_max >= 0.0) {
            return Err(Error::InvalidArgument(format!("r_max must be nonnegative, got {}", self.r_max)));
        }
        match self.mode {
            BoundsMode::Discounted if !(0.0..1.0).contains(&self.gamma) => {
                return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {}", self.gamma)));
            }
            _ => {}
        }
        if let KernelBandwidth::Fixed(h) = self.kernel_bandwidth {
            RbfKernel::new(h)?;
        }
        if self.features.m == 0 || !(self.features.h0 > 0.0) {
            return Err(Error::InvalidArgument("feature count and h0 must be positive".into()));
        }
        if self.h0_candidates.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidArgument("bandwidth candidates must be positive".into()));
        }
        Ok(())
    }

    fn amplitude(&self) -> f64 {
        if self.features.scaled {
            std::f64::consts::SQRT_2
        } else {
            1.0
        }
    }
}

/// Solver diagnostics carried into results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active_constraints: ActiveConstraints,
    pub constraint_value: f64,
}

impl From<&QcqpSolution> for SolverSummary {
    fn from(s: &QcqpSolution) -> Self {
        SolverSummary {
            status: s.status,
            objective: s.objective,
            kkt_residual: s.kkt_residual,
            iterations: s.iterations,
            active_constraints: s.active_constraints,
            constraint_value: s.constraint_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthBound {
    pub h0: f64,
    pub status: SolveStatus,
    pub eta_upper: Option<f64>,
    pub eta_lower: Option<f64>,
    /// Smallest attainable loss when the candidate was rejected.
    pub min_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub eta_upper: f64,
    pub eta_lower: f64,
    /// Optimal only when both solves are certified.
    pub status: SolveStatus,
    pub mode: BoundsMode,
    pub budget: ConcentrationBudget,
    pub kernel_bandwidth: f64,
    /// Feature bandwidth; absent for a multi-candidate ensemble.
    pub h0: Option<f64>,
    pub solver_upper: SolverSummary,
    pub solver_lower: SolverSummary,
    /// `η̂(Q̂)` of the anchoring estimator for post-hoc bounds.
    pub anchor: Option<f64>,
    pub per_bandwidth: Option<Vec<BandwidthBound>>,
    /// False for an ensemble taken without splitting `δ`.
    pub adjusted_guarantee: bool,
    /// `1 − γ` when the normalized view was requested.
    pub normalized_by: Option<f64>,
}

impl BoundsResult {
    pub fn width(&self) -> f64 {
        self.eta_upper - self.eta_lower
    }

    pub fn contains(&self, eta: f64) -> bool {
        self.eta_lower <= eta && eta <= self.eta_upper
    }

    /// `(lower, upper) / (1 − γ)` when requested.
    pub fn normalized(&self) -> Option<(f64, f64)> {
        self.normalized_by.map(|d| (self.eta_lower / d, self.eta_upper / d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasResult {
    pub theta_star: Vec<f64>,
    /// RKHS norm of the correction, `√m |θ*|`.
    pub debias_norm: f64,
    pub eta_hat: f64,
    pub corrected_eta: f64,
    pub was_feasible: bool,
    pub loss_before: f64,
    pub loss_after: f64,
    pub lambda_k: f64,
    pub status: SolveStatus,
    pub feature_map: FeatureMap,
    pub encoder: StateActionEncoder,
}

impl DebiasResult {
    pub fn correction(&self) -> QFunction {
        QFunction {
            theta: self.theta_star.clone(),
            feature_map: self.feature_map.clone(),
            encoder: self.encoder,
        }
    }
}

/// `N` draws `s₀ ~ μ₀`, `a₀ ~ π(·|s₀)`.
pub fn init_state_sample<E: Environment + ?Sized>(
    env: &E,
    target: &Policy,
    n: usize,
    seed: u64,
) -> Result<Vec<(State, usize)>> {
    if n == 0 {
        return Err(Error::Empty("initial-state sample"));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..n)
        .map(|_| {
            let s = env.reset(&mut rng);
            let a = sample_categorical(&target.action_probs(&s), &mut rng);
            (s, a)
        })
        .collect())
}

/// `(1/N) Σ Q(s_{i,0}, a_{i,0})`.
pub fn eta_hat(q: &dyn ActionValue, init_sample: &[(State, usize)]) -> Result<f64> {
    if init_sample.is_empty() {
        return Err(Error::Empty("initial-state sample"));
    }
    let total = crate::numeric::compensated_sum(init_sample.iter().map(|(s, a)| q.value(s, *a)));
    Ok(total / init_sample.len() as f64)
}

/// `ζ_i = r_i + γ Σ_a π(a|s'_i) Q̂(s'_i, a) − Q̂(s_i, a_i)`.
pub fn td_error_vector(q_hat: &dyn ActionValue, dataset: &Dataset, target: &Policy, gamma: f64) -> Vec<f64> {
    crate::bellman::residual_vector(q_hat, dataset, target, gamma).values
}

/// Encoder matching the dataset's state representation and the policy's action set.
pub fn encoder_for(dataset: &Dataset, policy: &Policy) -> Result<StateActionEncoder> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n_actions = policy.n_actions();
    let space = match (&dataset.transitions[0].s, policy) {
        (State::Discrete(_), Policy::Tabular { probs }) => StateSpace::Discrete { n_states: probs.len() },
        (State::Continuous(x), _) => StateSpace::Continuous { dim: x.len() },
        (State::Discrete(_), _) => {
            return Err(Error::InvalidPolicy("tabular states need a tabular policy".into()));
        }
    };
    if !policy.supports(&space) {
        return Err(Error::InvalidPolicy("policy does not match the dataset's state space".into()));
    }
    for t in &dataset.transitions {
        if !space.contains(&t.s) || !space.contains(&t.sn) {
            return Err(Error::InvalidArgument("transition state outside the state space".into()));
        }
        if t.a >= n_actions {
            return Err(Error::InvalidArgument(format!("action {} out of range", t.a)));
        }
    }
    Ok(StateActionEncoder::new(space, n_actions))
}

/// The random-feature map a configuration implies for `encoder`, at bandwidth `h0`.
pub fn feature_map_for(cfg: &BoundsConfig, encoder: &StateActionEncoder, h0: f64) -> Result<FeatureMap> {
    make_rff_with_scale(encoder.dim(), cfg.features.m, h0, cfg.features.seed, cfg.amplitude())
}

/// Program data shared by every bound variant.
pub struct Design {
    pub encoder: StateActionEncoder,
    pub feature_map: FeatureMap,
    pub kernel: RbfKernel,
    /// Rows `Φ(x_i) − γ Σ_a π(a|s'_i) Φ(s'_i, a)`.
    pub z: DMatrix<f64>,
    /// `K(x_i, x_j) / n²`.
    pub m: DMatrix<f64>,
    /// Mean feature vector of the initial-state sample.
    pub c0: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl Design {
    pub fn build(
        dataset: &Dataset,
        target: &Policy,
        init_sample: &[(State, usize)],
        cfg: &BoundsConfig,
        h0: f64,
        discount: f64,
    ) -> Result<Self> {
        let encoder = encoder_for(dataset, target)?;
        let feature_map = feature_map_for(cfg, &encoder, h0)?;
        let points = dataset_points(&encoder, dataset);
        let kernel = match cfg.kernel_bandwidth {
            KernelBandwidth::Fixed(h) => RbfKernel::new(h)?,
            KernelBandwidth::Median => RbfKernel::new(median_bandwidth(&points)?)?,
        };
        let n = dataset.len();
        let m_feat = feature_map.m;
        let mut z = feature_map.feature_matrix(&points);
        if discount != 0.0 {
            for (i, t) in dataset.transitions.iter().enumerate() {
                for (a, p) in target.action_probs(&t.sn).into_iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let phi = feature_map.features(&encoder.encode(&t.sn, a));
                    for k in 0..m_feat {
                        z[(i, k)] -= discount * p * phi[k];
                    }
                }
            }
        }
        let mut c0 = vec![0.0; m_feat];
        if !init_sample.is_empty() {
            let init_points: Vec<Vec<f64>> = init_sample.iter().map(|(s, a)| encoder.encode(s, *a)).collect();
            let total = init_points.len() as f64;
            for (count, p) in dedup_points(&init_points) {
                let w = count as f64 / total;
                for (acc, v) in c0.iter_mut().zip(feature_map.features(&p)) {
                    *acc += w * v;
                }
            }
        }
        debug_assert_eq!(z.nrows(), n);
        Ok(Design {
            m: scaled_gram(&kernel, &points),
            encoder,
            feature_map,
            kernel,
            z,
            c0,
            rewards: dataset.rewards(),
        })
    }

    pub fn problem(&self, target: Vec<f64>, lambda_k: f64, rho: f64) -> QcqpProblem {
        QcqpProblem {
            c: self.c0.clone(),
            z: self.z.clone(),
            m: self.m.clone(),
            target,
            lambda_k,
            ball_radius_sq: rho / self.feature_map.m as f64,
            sense: Sense::Maximize,
        }
    }

    /// `(Zθ − t)ᵀ M (Zθ − t)`.
    pub fn loss(&self, theta: &[f64], target: &[f64]) -> f64 {
        let r = &self.z * DVector::from_column_slice(theta) - DVector::from_column_slice(target);
        r.dot(&(&self.m * &r))
    }
}

fn combined_status(a: SolveStatus, b: SolveStatus) -> SolveStatus {
    if a == SolveStatus::Optimal && b == SolveStatus::Optimal {
        SolveStatus::Optimal
    } else if a == SolveStatus::Infeasible || b == SolveStatus::Infeasible {
        SolveStatus::Infeasible
    } else {
        SolveStatus::MaxIters
    }
}

fn discounted_budget(dataset: &Dataset, cfg: &BoundsConfig, n_init: usize, delta: f64) -> Result<ConcentrationBudget> {
    ConcentrationBudget::discounted(cfg.r_max, cfg.gamma, RBF_K_MAX, dataset.len(), n_init, delta)
}

#[allow(clippy::too_many_arguments)]
fn anchored_bounds(
    dataset: &Dataset,
    target: &Policy,
    init_sample: &[(State, usize)],
    cfg: &BoundsConfig,
    h0: f64,
    delta: f64,
    q_hat: Option<&dyn ActionValue>,
) -> Result<BoundsResult> {
    cfg.validate()?;
    if init_sample.is_empty() {
        return Err(Error::Empty("initial-state sample"));
    }
    let design = Design::build(dataset, target, init_sample, cfg, h0, cfg.gamma)?;
    let budget = discounted_budget(dataset, cfg, init_sample.len(), delta)?;
    let (goal, anchor) = match q_hat {
        Some(q) => (td_error_vector(q, dataset, target, cfg.gamma), Some(eta_hat(q, init_sample)?)),
        None => (design.rewards.clone(), None),
    };
    let problem = design.problem(goal, budget.lambda_k, cfg.rho);
    let plan = QcqpPlan::new(&problem)?;
    let upper = plan.solve(Sense::Maximize);
    if upper.status == SolveStatus::Infeasible {
        return Err(Error::Rejected {
            min_loss: plan.min_constraint_value(),
            lambda_k: budget.lambda_k,
        });
    }
    let lower = plan.solve(Sense::Minimize);
    let base = anchor.unwrap_or(0.0);
    Ok(BoundsResult {
        eta_upper: base + upper.objective + budget.lambda_eta,
        eta_lower: base + lower.objective - budget.lambda_eta,
        status: combined_status(upper.status, lower.status),
        mode: BoundsMode::Discounted,
        budget,
        kernel_bandwidth: design.kernel.bandwidth,
        h0: Some(h0),
        solver_upper: (&upper).into(),
        solver_lower: (&lower).into(),
        anchor,
        per_bandwidth: None,
        adjusted_guarantee: true,
        normalized_by: cfg.report_normalized.then(|| 1.0 - cfg.gamma),
    })
}

/// Upper and lower bounds on the discounted value of `target`.
pub fn confidence_bounds(
    dataset: &Dataset,
    target: &Policy,
    init_sample: &[(State, usize)],
    cfg: &BoundsConfig,
) -> Result<BoundsResult> {
    anchored_bounds(dataset, target, init_sample, cfg, cfg.features.h0, cfg.delta, None)
}

/// Bounds over the ball anchored at an existing estimator `q_hat`.
pub fn posthoc_bounds(
    dataset: &Dataset,
    q_hat: &dyn ActionValue,
    target: &Policy,
    init_sample: &[(State, usize)],
    cfg: &BoundsConfig,
) -> Result<BoundsResult> {
    anchored_bounds(dataset, target, init_sample, cfg, cfg.features.h0, cfg.delta, Some(q_hat))
}

/// Smallest random-feature correction that makes `q_hat` pass the loss test.
pub fn debias(
    dataset: &Dataset,
    q_hat: &dyn ActionValue,
    target: &Policy,
    init_sample: &[(State, usize)],
    cfg: &BoundsConfig,
) -> Result<DebiasResult> {
    cfg.validate()?;
    let design = Design::build(dataset, target, init_sample, cfg, cfg.features.h0, cfg.gamma)?;
    let budget = discounted_budget(dataset, cfg, init_sample.len().max(1), cfg.delta)?;
    let zeta = td_error_vector(q_hat, dataset, target, cfg.gamma);
    let base = eta_hat(q_hat, init_sample)?;
    let loss_before = design.loss(&vec![0.0; design.feature_map.m], &zeta);
    let sol = crate::solver::solve_min_norm_qcqp(&design.z, &design.m, &zeta, budget.lambda_k)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Rejected {
            min_loss: sol.min_constraint_value.unwrap_or(f64::NAN),
            lambda_k: budget.lambda_k,
        });
    }
    let was_feasible = sol.theta.iter().all(|x| *x == 0.0);
    let theta_norm = sol.theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let correction: f64 = sol.theta.iter().zip(&design.c0).map(|(a, b)| a * b).sum();
    Ok(DebiasResult {
        debias_norm: (design.feature_map.m as f64).sqrt() * theta_norm,
        eta_hat: base,
        corrected_eta: base + correction,
        was_feasible,
        loss_before,
        loss_after: design.loss(&sol.theta, &zeta),
        lambda_k: budget.lambda_k,
        status: sol.status,
        theta_star: sol.theta,
        feature_map: design.feature_map,
        encoder: design.encoder,
    })
}

/// Pessimistic combination over `cfg.h0_candidates`: the largest upper and the
/// smallest lower bound. Without `bonferroni` the combined interval carries no
/// adjusted coverage guarantee.
pub fn bounds_bandwidth_ensemble(
    dataset: &Dataset,
    target: &Policy,
    init_sample: &[(State, usize)],
    cfg: &BoundsConfig,
) -> Result<BoundsResult> {
    cfg.validate()?;
    let candidates = &cfg.h0_candidates;
    if candidates.is_empty() {
        return Err(Error::Empty("bandwidth candidate set"));
    }
    let delta = if cfg.bonferroni {
        cfg.delta / candidates.len() as f64
    } else {
        cfg.delta
    };
    let mut best: Option<BoundsResult> = None;
    let mut rows = Vec::with_capacity(candidates.len());
    let mut smallest_rejection = f64::INFINITY;
    let mut rejection_lambda = f64::NAN;
    for &h0 in candidates {
        match anchored_bounds(dataset, target, init_sample, cfg, h0, delta, None) {
            Ok(r) => {
                rows.push(BandwidthBound {
                    h0,
                    status: r.status,
                    eta_upper: Some(r.eta_upper),
                    eta_lower: Some(r.eta_lower),
                    min_loss: None,
                });
                best = Some(match best {
                    None => r,
                    Some(mut acc) => {
                        if r.eta_upper > acc.eta_upper {
                            acc.eta_upper = r.eta_upper;
                            acc.solver_upper = r.solver_upper;
                        }
                        if r.eta_lower < acc.eta_lower {
                            acc.eta_lower = r.eta_lower;
                            acc.solver_lower = r.solver_lower;
                        }
                        acc.status = combined_status(acc.status, r.status);
                        acc
                    }
                });
            }
            Err(Error::Rejected { min_loss, lambda_k }) => {
                smallest_rejection = smallest_rejection.min(min_loss);
                rejection_lambda = lambda_k;
                rows.push(BandwidthBound {
                    h0,
                    status: SolveStatus::Infeasible,
                    eta_upper: None,
                    eta_lower: None,
                    min_loss: Some(min_loss),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let mut out = best.ok_or(Error::Rejected {
        min_loss: smallest_rejection,
        lambda_k: rejection_lambda,
    })?;
    out.h0 = (candidates.len() == 1).then(|| candidates[0]);
    out.per_bandwidth = Some(rows);
    out.adjusted_guarantee = cfg.bonferroni || candidates.len() == 1;
    Ok(out)
}

/// Bounds on the long-run average reward; the gain is a program variable, so
/// no initial-state sample is involved.
pub fn average_reward_bounds(dataset: &Dataset, target: &Policy, cfg: &BoundsConfig) -> Result<BoundsResult> {
    cfg.validate()?;
    let design = Design::build(dataset, target, &[], cfg, cfg.features.h0, 1.0)?;
    let q_max = cfg.q_max.unwrap_or(cfg.amplitude() * cfg.rho.sqrt());
    let budget = ConcentrationBudget::average(cfg.r_max, q_max, RBF_K_MAX, dataset.len(), cfg.delta)?;
    let base = AverageRewardProblem {
        z: design.z.clone(),
        m: design.m.clone(),
        target: design.rewards.clone(),
        lambda_k: budget.lambda_k,
        r_max: cfg.r_max,
        ball_radius_sq: cfg.rho / design.feature_map.m as f64,
        sense: Sense::Maximize,
    };
    let upper = solve_average_reward_program(&base)?;
    if upper.status == SolveStatus::Infeasible {
        return Err(Error::Rejected {
            min_loss: upper.min_constraint_value.unwrap_or(f64::NAN),
            lambda_k: budget.lambda_k,
        });
    }
    let lower = solve_average_reward_program(&AverageRewardProblem {
        sense: Sense::Minimize,
        ..base
    })?;
    let summary = |s: &crate::solver::AverageRewardSolution| SolverSummary {
        status: s.status,
        objective: s.eta,
        kkt_residual: s.kkt_residual,
        iterations: s.iterations,
        active_constraints: ActiveConstraints {
            quadratic: !s.box_active,
            ball: false,
        },
        constraint_value: s.constraint_value,
    };
    Ok(BoundsResult {
        eta_upper: upper.eta,
        eta_lower: lower.eta,
        status: combined_status(upper.status, lower.status),
        mode: BoundsMode::Average,
        budget,
        kernel_bandwidth: design.kernel.bandwidth,
        h0: Some(cfg.features.h0),
        solver_upper: summary(&upper),
        solver_lower: summary(&lower),
        anchor: None,
        per_bandwidth: None,
        adjusted_guarantee: true,
        normalized_by: None,
    })
}

/// Dispatches on mode and on whether an ensemble was configured.
pub fn compute_bounds(
    dataset: &Dataset,
    target: &Policy,
    init_sample: &[(State, usize)],
    cfg: &BoundsConfig,
) -> Result<BoundsResult> {
    match cfg.mode {
        BoundsMode::Average => average_reward_bounds(dataset, target, cfg),
        BoundsMode::Discounted if cfg.h0_candidates.is_empty() => confidence_bounds(dataset, target, init_sample, cfg),
        BoundsMode::Discounted => bounds_bandwidth_ensemble(dataset, target, init_sample, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_q_values, expected_return, sample_transitions, softmax_policy, Provenance, QTable, TabularMDP};

    fn cfg() -> BoundsConfig {
        BoundsConfig {
            gamma: 0.8,
            delta: 0.1,
            rho: 50.0,
            n_init_samples: 1000,
            kernel_bandwidth: KernelBandwidth::Fixed(0.5),
            features: FeatureSpec { m: 32, h0: 1.0, seed: 3, scaled: true },
            h0_candidates: vec![],
            r_max: 1.0,
            mode: BoundsMode::Discounted,
            q_max: None,
            bonferroni: false,
            report_normalized: false,
        }
    }

    fn setup(seed: u64, zero_reward: bool) -> (TabularMDP, Policy, Dataset, Vec<(State, usize)>) {
        let mut rng = seeded_rng(seed);
        let mut mdp = TabularMDP::random(3, 2, 0.8, 1.0, &mut rng);
        if zero_reward {
            mdp.r = vec![vec![0.0; 2]; 3];
            mdp.r_max = Some(1.0);
        }
        let policy = softmax_policy(&[vec![0.2, 0.0], vec![0.0, 0.5], vec![1.0, 0.0]], 1.0).unwrap();
        let ds = sample_transitions(&mdp, &policy, 120, Provenance::IidStateDist, seed).unwrap();
        let init = init_state_sample(&mdp, &policy, 1000, seed + 1).unwrap();
        (mdp, policy, ds, init)
    }

    #[test]
    fn init_sample_point_mass_and_determinism() {
        let mdp = TabularMDP::new(
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.0], vec![0.0]],
            0.5,
            vec![0.0, 1.0],
        )
        .unwrap();
        let p = Policy::Tabular { probs: vec![vec![1.0], vec![1.0]] };
        let s = init_state_sample(&mdp, &p, 20, 4).unwrap();
        assert!(s.iter().all(|x| *x == (State::Discrete(1), 0)));
        assert_eq!(s, init_state_sample(&mdp, &p, 20, 4).unwrap());
        assert!(init_state_sample(&mdp, &p, 0, 4).is_err());
    }

    #[test]
    fn eta_hat_simple() {
        let c = |_: &State, _: usize| 2.5;
        let init = vec![(State::Discrete(0), 0); 7];
        assert_eq!(eta_hat(&c, &init).unwrap(), 2.5);
        let q = QTable(vec![vec![1.0, 3.0]]);
        assert_eq!(eta_hat(&q, &[(State::Discrete(0), 0), (State::Discrete(0), 1)]).unwrap(), 2.0);
        assert!(eta_hat(&q, &[]).is_err());
    }

    #[test]
    fn zero_reward_interval_contains_zero() {
        let (_, policy, ds, init) = setup(1, true);
        let r = confidence_bounds(&ds, &policy, &init, &cfg()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.eta_upper >= r.budget.lambda_eta - 1e-12);
        assert!(r.eta_lower <= -r.budget.lambda_eta + 1e-12);
        assert!(r.width() >= 2.0 * r.budget.lambda_eta);
    }

    #[test]
    fn vacuous_loss_width_is_ball_geometry() {
        let (_, policy, ds, init) = setup(2, false);
        let mut c = cfg();
        c.gamma = 0.999_999_999_999;
        c.r_max = 1e6;
        let design = Design::build(&ds, &policy, &init, &c, c.features.h0, c.gamma).unwrap();
        let r = confidence_bounds(&ds, &policy, &init, &c).unwrap();
        let c0_norm = design.c0.iter().map(|x| x * x).sum::<f64>().sqrt();
        let m = c.features.m as f64;
        let expected = 2.0 * ((c.rho / m).sqrt() * c0_norm + r.budget.lambda_eta);
        assert!((r.width() - expected).abs() <= 1e-9 * expected, "{} vs {}", r.width(), expected);
    }

    #[test]
    fn posthoc_with_zero_estimator_matches_plain_bounds() {
        let (_, policy, ds, init) = setup(3, false);
        let plain = confidence_bounds(&ds, &policy, &init, &cfg()).unwrap();
        let zero = |_: &State, _: usize| 0.0;
        let post = posthoc_bounds(&ds, &zero, &policy, &init, &cfg()).unwrap();
        assert_eq!(plain.eta_upper, post.eta_upper);
        assert_eq!(plain.eta_lower, post.eta_lower);
    }

    #[test]
    fn debias_keeps_feasible_estimator_and_corrects_biased_one() {
        let (mdp, policy, ds, init) = setup(4, false);
        let qpi = exact_q_values(&mdp, &policy).unwrap();
        let res = debias(&ds, &qpi, &policy, &init, &cfg()).unwrap();
        assert!(res.was_feasible);
        assert_eq!(res.debias_norm, 0.0);
        assert_eq!(res.corrected_eta, res.eta_hat);

        let biased = qpi.map(|x| x + 100.0);
        let res = debias(&ds, &biased, &policy, &init, &cfg()).unwrap();
        assert!(!res.was_feasible);
        assert!(res.loss_after <= res.lambda_k * (1.0 + 1e-8));
        assert!(res.debias_norm > 0.0);
        let truth = expected_return(&mdp, &policy).unwrap();
        assert!((res.corrected_eta - truth).abs() < (res.eta_hat - truth).abs());
    }

    #[test]
    fn ensemble_contracts() {
        let (_, policy, ds, init) = setup(5, false);
        let mut c = cfg();
        c.h0_candidates = vec![1.0];
        let single = confidence_bounds(&ds, &policy, &init, &c).unwrap();
        let ens = bounds_bandwidth_ensemble(&ds, &policy, &init, &c).unwrap();
        assert_eq!(single.eta_upper, ens.eta_upper);
        assert_eq!(single.eta_lower, ens.eta_lower);

        c.h0_candidates = vec![0.5, 1.0, 2.0];
        let ens = bounds_bandwidth_ensemble(&ds, &policy, &init, &c).unwrap();
        assert!(!ens.adjusted_guarantee);
        for row in ens.per_bandwidth.as_ref().unwrap() {
            if let (Some(u), Some(l)) = (row.eta_upper, row.eta_lower) {
                assert!(ens.eta_upper >= u && ens.eta_lower <= l);
            }
        }
        c.bonferroni = true;
        assert!(bounds_bandwidth_ensemble(&ds, &policy, &init, &c).unwrap().adjusted_guarantee);
    }

    #[test]
    fn average_mode_zero_reward_and_box() {
        let (_, policy, ds, _) = setup(6, true);
        let mut c = cfg();
        c.mode = BoundsMode::Average;
        let r = average_reward_bounds(&ds, &policy, &c).unwrap();
        assert!(r.contains(0.0));
        assert!(r.eta_upper.abs() <= c.r_max && r.eta_lower.abs() <= c.r_max);
        assert_eq!(r.budget.lambda_eta, 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.delta = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.rho = -1.0;
        assert!(c.validate().is_err());
        let json = r#"{"gamma":0.9,"delta":0.05,"rho":10,"features":{"m":16,"h0":1.0,"seed":1},"r_max":1}"#;
        let c: BoundsConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.n_init_samples, DEFAULT_N_INIT);
        assert_eq!(c.kernel_bandwidth, KernelBandwidth::Fixed(0.5));
        assert!(c.features.scaled);
    }
}
