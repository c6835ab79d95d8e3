//! MDP abstractions, policies, environments, transition sampling and exact
//! ground-truth oracles.

mod io;
mod policy;
mod puck;
mod sampling;
mod tabular;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_jsonl, read_jsonl_str, write_jsonl, write_jsonl_string};
pub use policy::{softmax_policy, Policy};
pub use puck::{puck_env, PuckEnv};
pub use sampling::{
    monte_carlo_return, sample_categorical, sample_transitions, sample_trajectories, Step,
    Trajectory,
};
pub use tabular::{
    average_reward_oracle, burn_in_visitation, exact_q_values, expected_return,
    finite_horizon_return, optimal_q_values, AverageRewardOracle, TabularMDP,
};

/// Generator used for every stochastic path in the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A state: an index for tabular MDPs, a real vector for continuous ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum State {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl State {
    pub fn index(&self) -> usize {
        match self {
            State::Discrete(s) => *s,
            State::Continuous(_) => panic!("continuous state used where a tabular index is required"),
        }
    }

    pub fn kind(&self) -> StateSpaceKind {
        match self {
            State::Discrete(_) => StateSpaceKind::Discrete,
            State::Continuous(_) => StateSpaceKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSpaceKind {
    Discrete,
    Continuous,
}

/// Shape of a state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpace {
    Discrete { n_states: usize },
    Continuous { dim: usize },
}

impl StateSpace {
    pub fn contains(&self, s: &State) -> bool {
        match (self, s) {
            (StateSpace::Discrete { n_states }, State::Discrete(i)) => i < n_states,
            (StateSpace::Continuous { dim }, State::Continuous(v)) => v.len() == *dim,
            _ => false,
        }
    }
}

/// One observed `(s, a, r, s')` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: usize,
    pub r: f64,
    pub sn: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Independent draws: reset, geometric burn-in under the behavior policy, one recorded step.
    IidStateDist,
    /// Consecutive transitions of one behavior trajectory.
    SingleTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.r).collect()
    }

    /// Wraps externally loaded transitions.
    pub fn from_transitions(transitions: Vec<Transition>) -> crate::Result<Self> {
        if transitions.is_empty() {
            return Err(crate::Error::Empty("dataset"));
        }
        let kind = transitions[0].s.kind();
        if transitions
            .iter()
            .any(|t| t.s.kind() != kind || t.sn.kind() != kind)
        {
            return Err(crate::Error::InvalidArgument(
                "transitions mix discrete and continuous states".into(),
            ));
        }
        Ok(Dataset {
            transitions,
            provenance: Provenance::IidStateDist,
            seed: 0,
        })
    }
}

/// Anything that can be rolled out with a behavior policy.
pub trait Environment {
    fn n_actions(&self) -> usize;
    fn state_space(&self) -> StateSpace;
    fn r_max(&self) -> f64;
    fn gamma(&self) -> f64;
    fn reset(&self, rng: &mut SimRng) -> State;
    fn step(&self, s: &State, a: usize, rng: &mut SimRng) -> (f64, State);
}

/// A state-action value function.
pub trait ActionValue {
    fn value(&self, s: &State, a: usize) -> f64;

    /// `E_{a ~ policy(.|s)} Q(s, a)` by exact enumeration of the action set.
    fn expected_value(&self, s: &State, policy: &Policy) -> f64 {
        policy
            .action_probs(s)
            .iter()
            .enumerate()
            .map(|(a, p)| if *p == 0.0 { 0.0 } else { p * self.value(s, a) })
            .sum()
    }
}

/// Tabular Q-function `Q[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QTable(pub Vec<Vec<f64>>);

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable(vec![vec![0.0; n_actions]; n_states])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        QTable(
            self.0
                .iter()
                .map(|row| row.iter().map(|&x| f(x)).collect())
                .collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }
}

impl ActionValue for QTable {
    fn value(&self, s: &State, a: usize) -> f64 {
        self.0[s.index()][a]
    }
}

impl<F: Fn(&State, usize) -> f64> ActionValue for F {
    fn value(&self, s: &State, a: usize) -> f64 {
        self(s, a)
    }
}

/// Serializable environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Tabular(TabularMDP),
    Puck(PuckEnv),
}

impl EnvSpec {
    pub fn as_tabular(&self) -> Option<&TabularMDP> {
        match self {
            EnvSpec::Tabular(m) => Some(m),
            EnvSpec::Puck(_) => None,
        }
    }

    /// Accepts either a tagged environment document or a bare tabular MDP
    /// document (`P`, `r`, `gamma`, `mu0`).
    pub fn from_json_str(s: &str) -> crate::Result<Self> {
        match serde_json::from_str::<EnvSpec>(s) {
            Ok(spec) => spec.validated(),
            Err(tagged_err) => match serde_json::from_str::<TabularMDP>(s) {
                Ok(m) => EnvSpec::Tabular(m).validated(),
                Err(_) => Err(tagged_err.into()),
            },
        }
    }

    fn validated(self) -> crate::Result<Self> {
        if let EnvSpec::Tabular(m) = &self {
            m.validate()?;
        }
        Ok(self)
    }
}

impl Environment for EnvSpec {
    fn n_actions(&self) -> usize {
        match self {
            EnvSpec::Tabular(m) => m.n_actions(),
            EnvSpec::Puck(p) => p.n_actions(),
        }
    }
    fn state_space(&self) -> StateSpace {
        match self {
            EnvSpec::Tabular(m) => m.state_space(),
            EnvSpec::Puck(p) => p.state_space(),
        }
    }
    fn r_max(&self) -> f64 {
        match self {
            EnvSpec::Tabular(m) => Environment::r_max(m),
            EnvSpec::Puck(p) => Environment::r_max(p),
        }
    }
    fn gamma(&self) -> f64 {
        match self {
            EnvSpec::Tabular(m) => Environment::gamma(m),
            EnvSpec::Puck(p) => Environment::gamma(p),
        }
    }
    fn reset(&self, rng: &mut SimRng) -> State {
        match self {
            EnvSpec::Tabular(m) => m.reset(rng),
            EnvSpec::Puck(p) => p.reset(rng),
        }
    }
    fn step(&self, s: &State, a: usize, rng: &mut SimRng) -> (f64, State) {
        match self {
            EnvSpec::Tabular(m) => m.step(s, a, rng),
            EnvSpec::Puck(p) => p.step(s, a, rng),
        }
    }
}
