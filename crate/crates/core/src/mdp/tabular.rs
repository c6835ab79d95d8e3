use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{sample_categorical, ActionValue, Environment, Policy, QTable, SimRng, State, StateSpace};
use crate::{Error, Result};

const PROB_TOL: f64 = 1e-12;

/// Finite MDP `<S, A, P, r, gamma, mu0>` with deterministic rewards `r[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    /// `P[s][a][s']`.
    #[serde(rename = "P")]
    pub transition: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
    pub mu0: Vec<f64>,
    /// Reward bound; defaults to `max |r|` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

impl TabularMDP {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        r: Vec<Vec<f64>>,
        gamma: f64,
        mu0: Vec<f64>,
    ) -> Result<Self> {
        let m = TabularMDP {
            transition,
            r,
            gamma,
            mu0,
            r_max: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Random MDP with Dirichlet(1) transition rows, rewards uniform on
    /// `[0, r_max]` and a Dirichlet(1) initial distribution.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, r_max: f64, rng: &mut SimRng) -> Self {
        let mut dirichlet = |k: usize| -> Vec<f64> {
            let v: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = v.iter().sum();
            v.into_iter().map(|x: f64| x / total).collect()
        };
        let transition = (0..n_states)
            .map(|_| (0..n_actions).map(|_| dirichlet(n_states)).collect())
            .collect();
        let mu0 = dirichlet(n_states);
        let r = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random::<f64>() * r_max).collect())
            .collect();
        TabularMDP {
            transition,
            r,
            gamma,
            mu0,
            r_max: Some(r_max),
        }
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn n_actions(&self) -> usize {
        self.r.first().map_or(0, Vec::len)
    }

    pub fn r_max(&self) -> f64 {
        self.r_max.unwrap_or_else(|| {
            self.r
                .iter()
                .flatten()
                .fold(0.0_f64, |acc, x| acc.max(x.abs()))
        })
    }

    /// Flat index of `(s, a)`.
    #[inline]
    pub fn sa_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions() + a
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.n_states();
        let na = self.n_actions();
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp("empty state or action set".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.r.len() != ns || self.r.iter().any(|row| row.len() != na) {
            return Err(Error::InvalidMdp("reward matrix shape".into()));
        }
        if self.mu0.len() != ns {
            return Err(Error::InvalidMdp("mu0 length".into()));
        }
        check_distribution(&self.mu0).map_err(|e| Error::InvalidMdp(format!("mu0: {e}")))?;
        for (s, rows) in self.transition.iter().enumerate() {
            if rows.len() != na {
                return Err(Error::InvalidMdp(format!("P[{s}] has {} actions", rows.len())));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != ns {
                    return Err(Error::InvalidMdp(format!("P[{s}][{a}] length")));
                }
                check_distribution(row).map_err(|e| Error::InvalidMdp(format!("P[{s}][{a}]: {e}")))?;
            }
        }
        let r_max = self.r_max();
        if self.r.iter().flatten().any(|x| x.abs() > r_max) {
            return Err(Error::InvalidMdp("reward exceeds r_max".into()));
        }
        Ok(())
    }

    /// `P_pi[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')`.
    pub fn policy_transition_matrix(&self, policy: &Policy) -> DMatrix<f64> {
        let ns = self.n_states();
        let na = self.n_actions();
        let k = ns * na;
        let pi: Vec<Vec<f64>> = (0..ns).map(|s| policy.action_probs(&State::Discrete(s))).collect();
        DMatrix::from_fn(k, k, |i, j| {
            let (s, a) = (i / na, i % na);
            let (sp, ap) = (j / na, j % na);
            self.transition[s][a][sp] * pi[sp][ap]
        })
    }

    fn reward_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_states() * self.n_actions(),
            self.r.iter().flatten().copied(),
        )
    }

    /// Exact Bellman residual `R_pi Q(s,a) = r + gamma E[Q(s',a')] - Q(s,a)`.
    pub fn bellman_residual(&self, q: &dyn ActionValue, policy: &Policy) -> QTable {
        self.residual_with(q, policy, self.gamma, 0.0)
    }

    /// Average-reward residual `r + E[Q(s',a')] - eta - Q(s,a)`.
    pub fn average_bellman_residual(&self, q: &dyn ActionValue, eta: f64, policy: &Policy) -> QTable {
        self.residual_with(q, policy, 1.0, eta)
    }

    fn residual_with(&self, q: &dyn ActionValue, policy: &Policy, discount: f64, eta: f64) -> QTable {
        let ns = self.n_states();
        let next_v: Vec<f64> = (0..ns)
            .map(|s| q.expected_value(&State::Discrete(s), policy))
            .collect();
        QTable(
            (0..ns)
                .map(|s| {
                    (0..self.n_actions())
                        .map(|a| {
                            let ev: f64 = self.transition[s][a]
                                .iter()
                                .zip(&next_v)
                                .map(|(p, v)| p * v)
                                .sum();
                            self.r[s][a] + discount * ev - eta - q.value(&State::Discrete(s), a)
                        })
                        .collect()
                })
                .collect(),
        )
    }

    fn unflatten(&self, v: &DVector<f64>) -> QTable {
        let na = self.n_actions();
        QTable(
            (0..self.n_states())
                .map(|s| (0..na).map(|a| v[s * na + a]).collect())
                .collect(),
        )
    }
}

fn check_distribution(p: &[f64]) -> std::result::Result<(), String> {
    if p.iter().any(|x| !(*x >= 0.0)) {
        return Err("negative or NaN probability".into());
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

impl Environment for TabularMDP {
    fn n_actions(&self) -> usize {
        TabularMDP::n_actions(self)
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Discrete {
            n_states: self.n_states(),
        }
    }
    fn r_max(&self) -> f64 {
        TabularMDP::r_max(self)
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn reset(&self, rng: &mut SimRng) -> State {
        State::Discrete(sample_categorical(&self.mu0, rng))
    }
    fn step(&self, s: &State, a: usize, rng: &mut SimRng) -> (f64, State) {
        let s = s.index();
        let sn = sample_categorical(&self.transition[s][a], rng);
        (self.r[s][a], State::Discrete(sn))
    }
}

/// `Q^pi` from the dense linear system `(I - gamma P_pi) Q = r`.
pub fn exact_q_values(mdp: &TabularMDP, policy: &Policy) -> Result<QTable> {
    let k = mdp.n_states() * mdp.n_actions();
    let a = DMatrix::identity(k, k) - mdp.policy_transition_matrix(policy) * mdp.gamma;
    let q = a.lu().solve(&mdp.reward_vector()).ok_or(Error::Singular)?;
    Ok(mdp.unflatten(&q))
}

/// `eta^pi = sum_s mu0(s) sum_a pi(a|s) Q^pi(s,a)`.
pub fn expected_return(mdp: &TabularMDP, policy: &Policy) -> Result<f64> {
    let q = exact_q_values(mdp, policy)?;
    Ok((0..mdp.n_states())
        .map(|s| mdp.mu0[s] * q.expected_value(&State::Discrete(s), policy))
        .sum())
}

/// Optimal action values by value iteration (used to build softmax policies).
pub fn optimal_q_values(mdp: &TabularMDP) -> QTable {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let mut q = QTable::zeros(ns, na);
    for _ in 0..100_000 {
        let v: Vec<f64> = q
            .0
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let next = QTable(
            (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| {
                            mdp.r[s][a]
                                + mdp.gamma
                                    * mdp.transition[s][a].iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
                        })
                        .collect()
                })
                .collect(),
        );
        let diff = next
            .0
            .iter()
            .flatten()
            .zip(q.0.iter().flatten())
            .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()));
        q = next;
        if diff < 1e-13 {
            break;
        }
    }
    q
}

/// `E[sum_{t=1}^T gamma^{t-1} r_t]` from `s_1 ~ mu0` under `policy`.
pub fn finite_horizon_return(mdp: &TabularMDP, policy: &Policy, horizon: usize) -> f64 {
    let ns = mdp.n_states();
    let pi: Vec<Vec<f64>> = (0..ns).map(|s| policy.action_probs(&State::Discrete(s))).collect();
    // v[s] = value with `steps` steps remaining
    let mut v = vec![0.0; ns];
    for _ in 0..horizon {
        v = (0..ns)
            .map(|s| {
                (0..mdp.n_actions())
                    .map(|a| {
                        let ev: f64 = mdp.transition[s][a].iter().zip(&v).map(|(p, x)| p * x).sum();
                        pi[s][a] * (mdp.r[s][a] + mdp.gamma * ev)
                    })
                    .sum()
            })
            .collect();
    }
    mdp.mu0.iter().zip(&v).map(|(m, x)| m * x).sum()
}

/// Distribution of the recorded `(s, a)` under the i.i.d. sampling mode:
/// `s_K` with `K ~ Geometric(1 - gamma)` burn-in steps from `mu0`, then `a ~ behavior`.
pub fn burn_in_visitation(mdp: &TabularMDP, behavior: &Policy) -> Vec<Vec<f64>> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let pi: Vec<Vec<f64>> = (0..ns).map(|s| behavior.action_probs(&State::Discrete(s))).collect();
    let p_state = DMatrix::from_fn(ns, ns, |s, sp| {
        (0..na).map(|a| pi[s][a] * mdp.transition[s][a][sp]).sum::<f64>()
    });
    // d^T (I - gamma P) = (1 - gamma) mu0^T
    let a = (DMatrix::identity(ns, ns) - p_state * mdp.gamma).transpose();
    let rhs = DVector::from_iterator(ns, mdp.mu0.iter().map(|m| m * (1.0 - mdp.gamma)));
    let d = a.lu().solve(&rhs).expect("I - gamma P is nonsingular for gamma < 1");
    (0..ns)
        .map(|s| (0..na).map(|a| d[s] * pi[s][a]).collect())
        .collect()
}

/// Exact average-reward quantities for an ergodic chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRewardOracle {
    pub eta: f64,
    /// Adjusted value function normalized so that its stationary mean is zero.
    pub q: QTable,
    /// Stationary distribution over `(s, a)`.
    pub stationary: Vec<Vec<f64>>,
}

pub fn average_reward_oracle(mdp: &TabularMDP, policy: &Policy) -> Result<AverageRewardOracle> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let k = ns * na;
    let p = mdp.policy_transition_matrix(policy);
    // stationary distribution: d^T (P - I) = 0, sum d = 1 (last equation replaced)
    let mut a = (p.clone() - DMatrix::identity(k, k)).transpose();
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(k);
    rhs[k - 1] = 1.0;
    let d = a.lu().solve(&rhs).ok_or(Error::Singular)?;
    let r = mdp.reward_vector();
    let eta = d.dot(&r);
    // (I - P + 1 d^T) Q = r - eta  ⇒  d^T Q = 0
    let ones = DVector::from_element(k, 1.0);
    let sys = DMatrix::identity(k, k) - p + &ones * d.transpose();
    let q = sys.lu().solve(&(r - ones * eta)).ok_or(Error::Singular)?;
    Ok(AverageRewardOracle {
        eta,
        q: mdp.unflatten(&q),
        stationary: mdp.unflatten(&d).0,
    })
}
