//! Experiment configuration: one JSON document describing the environment,
//! the policy pair, sampling sizes, bound settings and sweep grids.

use std::fs;
use std::path::{Path, PathBuf};

use kbope::features::{project_onto_features, StateActionEncoder};
use kbope::mdp::{
    average_reward_oracle, exact_q_values, expected_return, optimal_q_values, softmax_policy, EnvSpec, Policy, Provenance, PuckEnv, State,
    StateSpace, TabularMDP,
};
use kbope::ope::{feature_map_for, BoundsConfig, BoundsMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSource {
    /// Path to an environment JSON document, relative to the config file.
    File(PathBuf),
    /// Random tabular MDP.
    Random {
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        r_max: f64,
        seed: u64,
    },
    Puck(PuckEnv),
    Inline(EnvSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub count: usize,
    pub horizon: usize,
}

fn default_behavior_temperature() -> f64 {
    1.0
}
fn default_target_temperature() -> f64 {
    0.5
}
fn default_n() -> usize {
    500
}
fn default_sampling() -> Provenance {
    Provenance::IidStateDist
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSource,
    #[serde(default = "default_behavior_temperature")]
    pub behavior_temperature: f64,
    #[serde(default = "default_target_temperature")]
    pub target_temperature: f64,
    /// Explicit policy documents override the temperature-based defaults.
    #[serde(default)]
    pub behavior_policy: Option<PathBuf>,
    #[serde(default)]
    pub target_policy: Option<PathBuf>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_sampling")]
    pub sampling: Provenance,
    #[serde(default)]
    pub trajectories: Option<TrajectorySpec>,
    pub bounds: BoundsConfig,
    /// When set on a tabular environment, `rho` becomes this factor times the
    /// squared RKHS norm of the true value function's feature projection.
    #[serde(default)]
    pub rho_oracle_factor: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub delta_grid: Vec<f64>,
    #[serde(default)]
    pub h0_grid: Vec<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// A config with every referenced file loaded.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub env: EnvSpec,
    pub behavior: Policy,
    pub target: Policy,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_env(path: &Path) -> Result<EnvSpec, CliError> {
    EnvSpec::from_json_str(&read_text(path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn load_policy(path: &Path) -> Result<Policy, CliError> {
    let p: Policy = read_json(path)?;
    p.validate()
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok(p)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Resolved, CliError> {
        let config: ExperimentConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.validate()?;
        let env = match &config.env {
            EnvSource::File(p) => load_env(&relative_to(base, p))?,
            EnvSource::Random {
                n_states,
                n_actions,
                gamma,
                r_max,
                seed,
            } => {
                let mut rng = kbope::mdp::seeded_rng(*seed);
                EnvSpec::Tabular(TabularMDP::random(*n_states, *n_actions, *gamma, *r_max, &mut rng))
            }
            EnvSource::Puck(p) => EnvSpec::Puck(p.clone()),
            EnvSource::Inline(spec) => EnvSpec::from_json_str(&serde_json::to_string(spec).expect("serializable"))
                .map_err(|e| CliError::Parse(format!("inline environment: {e}")))?,
        };
        let behavior = match &config.behavior_policy {
            Some(p) => load_policy(&relative_to(base, p))?,
            None => default_policy(&env, config.behavior_temperature)?,
        };
        let target = match &config.target_policy {
            Some(p) => load_policy(&relative_to(base, p))?,
            None => default_policy(&env, config.target_temperature)?,
        };
        let mut resolved = Resolved {
            config,
            env,
            behavior,
            target,
        };
        if let Some(factor) = resolved.config.rho_oracle_factor {
            resolved.config.bounds.rho = oracle_rho(&resolved, factor, resolved.config.bounds.features.h0)?;
        }
        Ok(resolved)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Parse(format!("config: {m}")));
        self.bounds.validate().map_err(|e| CliError::Parse(format!("config.bounds: {e}")))?;
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.behavior_temperature > 0.0 && self.target_temperature > 0.0) {
            return bad("temperatures must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.n_grid.contains(&0) {
            return bad("n_grid entries must be positive".into());
        }
        if self.delta_grid.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return bad("delta_grid entries must lie in (0, 1)".into());
        }
        if self.h0_grid.iter().any(|h| !(*h > 0.0)) {
            return bad("h0_grid entries must be positive".into());
        }
        if let Some(f) = self.rho_oracle_factor {
            if !(f > 0.0) {
                return bad("rho_oracle_factor must be positive".into());
            }
        }
        if let Some(t) = self.trajectories {
            if t.count < 2 || t.horizon == 0 {
                return bad("trajectories need count >= 2 and horizon >= 1".into());
            }
        }
        Ok(())
    }
}

/// Softmax over the optimal Q-table for tabular environments; for the puck, a
/// softmax over "push along the velocity".
pub fn default_policy(env: &EnvSpec, temperature: f64) -> Result<Policy, CliError> {
    match env {
        EnvSpec::Tabular(mdp) => softmax_policy(&optimal_q_values(mdp).0, temperature)
            .map_err(|e| CliError::Parse(format!("policy: {e}"))),
        EnvSpec::Puck(_) => Ok(Policy::LinearSoftmax {
            weights: vec![vec![0.0, -100.0], vec![0.0, 0.0], vec![0.0, 100.0]],
            bias: vec![0.0, 0.0, 0.0],
            temperature,
        }),
    }
}

/// `factor · m |θ_proj|²` for the projection of the exact value function (the
/// mean-zero relative value in average mode) onto the features at bandwidth `h0`.
pub fn oracle_rho(r: &Resolved, factor: f64, h0: f64) -> Result<f64, CliError> {
    let Some(mdp) = r.env.as_tabular() else {
        return Err(CliError::Parse("rho_oracle_factor needs a tabular environment".into()));
    };
    let q = match r.config.bounds.mode {
        BoundsMode::Discounted => exact_q_values(mdp, &r.target),
        BoundsMode::Average => average_reward_oracle(mdp, &r.target).map(|o| o.q),
    }
    .map_err(|e| CliError::Parse(format!("value oracle: {e}")))?;
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let enc = StateActionEncoder::new(StateSpace::Discrete { n_states: ns }, na);
    let fm = feature_map_for(&r.config.bounds, &enc, h0).map_err(|e| CliError::Parse(e.to_string()))?;
    let (points, values): (Vec<Vec<f64>>, Vec<f64>) = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| (enc.encode(&State::Discrete(s), a), q.0[s][a]))
        .unzip();
    let (theta, _) = project_onto_features(&fm, &points, &values).map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(factor * fm.m as f64 * theta.iter().map(|t| t * t).sum::<f64>())
}

/// Exact target value for tabular environments in the configured mode.
pub fn true_value(r: &Resolved) -> Option<f64> {
    let mdp = r.env.as_tabular()?;
    match r.config.bounds.mode {
        BoundsMode::Discounted => expected_return(mdp, &r.target).ok(),
        BoundsMode::Average => average_reward_oracle(mdp, &r.target).ok().map(|o| o.eta),
    }
}
