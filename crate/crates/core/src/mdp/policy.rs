use serde::{Deserialize, Serialize};

use super::{State, StateSpace};
use crate::{Error, Result};

const PROB_TOL: f64 = 1e-12;

/// Action distribution given a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// `probs[s][a] = pi(a|s)`.
    Tabular { probs: Vec<Vec<f64>> },
    /// `pi(a|s) ∝ exp((weights[a]·s + bias[a]) / temperature)` over a continuous state.
    LinearSoftmax {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        temperature: f64,
    },
}

impl Policy {
    pub fn n_actions(&self) -> usize {
        match self {
            Policy::Tabular { probs } => probs.first().map_or(0, Vec::len),
            Policy::LinearSoftmax { bias, .. } => bias.len(),
        }
    }

    pub fn action_probs(&self, s: &State) -> Vec<f64> {
        match (self, s) {
            (Policy::Tabular { probs }, State::Discrete(i)) => probs[*i].clone(),
            (
                Policy::LinearSoftmax {
                    weights,
                    bias,
                    temperature,
                },
                State::Continuous(x),
            ) => {
                let logits: Vec<f64> = weights
                    .iter()
                    .zip(bias)
                    .map(|(w, b)| (crate::numeric::dot(w, x) + b) / temperature)
                    .collect();
                softmax(&logits)
            }
            _ => panic!("policy and state representation disagree"),
        }
    }

    pub fn prob(&self, s: &State, a: usize) -> f64 {
        match (self, s) {
            (Policy::Tabular { probs }, State::Discrete(i)) => probs[*i][a],
            _ => self.action_probs(s)[a],
        }
    }

    /// Whether the policy can be evaluated on states from `space`.
    pub fn supports(&self, space: &StateSpace) -> bool {
        match (self, space) {
            (Policy::Tabular { probs }, StateSpace::Discrete { n_states }) => probs.len() == *n_states,
            (Policy::LinearSoftmax { weights, .. }, StateSpace::Continuous { dim }) => {
                weights.iter().all(|w| w.len() == *dim)
            }
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Policy::Tabular { probs } => {
                if probs.is_empty() {
                    return Err(Error::InvalidPolicy("no states".into()));
                }
                let k = probs[0].len();
                for (s, row) in probs.iter().enumerate() {
                    if row.len() != k || k == 0 {
                        return Err(Error::InvalidPolicy(format!("row {s} has wrong length")));
                    }
                    if row.iter().any(|p| !(*p >= 0.0)) {
                        return Err(Error::InvalidPolicy(format!("row {s} has a negative entry")));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > PROB_TOL {
                        return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
                    }
                }
                Ok(())
            }
            Policy::LinearSoftmax {
                weights,
                bias,
                temperature,
            } => {
                if !(*temperature > 0.0) {
                    return Err(Error::InvalidPolicy("temperature must be positive".into()));
                }
                if weights.len() != bias.len() || bias.is_empty() {
                    return Err(Error::InvalidPolicy("weights/bias length mismatch".into()));
                }
                let d = weights[0].len();
                if weights.iter().any(|w| w.len() != d) {
                    return Err(Error::InvalidPolicy("ragged weight matrix".into()));
                }
                Ok(())
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `pi(a|s) ∝ exp(Q[s][a] / temperature)`, normalized per state.
pub fn softmax_policy(q_table: &[Vec<f64>], temperature: f64) -> Result<Policy> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let probs = q_table
        .iter()
        .map(|row| {
            let logits: Vec<f64> = row.iter().map(|q| q / temperature).collect();
            softmax(&logits)
        })
        .collect();
    Ok(Policy::Tabular { probs })
}
