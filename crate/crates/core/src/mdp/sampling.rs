use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{seeded_rng, Dataset, Environment, Policy, Provenance, SimRng, State, Transition};
use crate::numeric::mean_and_se;
use crate::{Error, Result};

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last index with positive mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws `n` transitions from `env` under `behavior`. Deterministic in `seed`.
pub fn sample_transitions<E: Environment + ?Sized>(
    env: &E,
    behavior: &Policy,
    n: usize,
    mode: Provenance,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let gamma = env.gamma();
    let mut transitions = Vec::with_capacity(n);
    match mode {
        Provenance::IidStateDist => {
            for _ in 0..n {
                let mut s = env.reset(&mut rng);
                // geometric(1 - gamma) burn-in
                while rng.random::<f64>() < gamma {
                    let a = sample_categorical(&behavior.action_probs(&s), &mut rng);
                    s = env.step(&s, a, &mut rng).1;
                }
                let a = sample_categorical(&behavior.action_probs(&s), &mut rng);
                let (r, sn) = env.step(&s, a, &mut rng);
                transitions.push(Transition { s, a, r, sn });
            }
        }
        Provenance::SingleTrajectory => {
            let mut s = env.reset(&mut rng);
            for _ in 0..n {
                let a = sample_categorical(&behavior.action_probs(&s), &mut rng);
                let (r, sn) = env.step(&s, a, &mut rng);
                transitions.push(Transition {
                    s,
                    a,
                    r,
                    sn: sn.clone(),
                });
                s = sn;
            }
        }
    }
    Ok(Dataset {
        transitions,
        provenance: mode,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub s: State,
    pub a: usize,
    pub r: f64,
}

/// One episode of `(state, action, reward)` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    /// `sum_{t=1}^T gamma^{t-1} r_t`.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut g = 0.0;
        let mut w = 1.0;
        for step in &self.steps {
            g += w * step.r;
            w *= gamma;
        }
        g
    }
}

/// `n_episodes` behavior rollouts of fixed length `horizon` from `mu0`.
pub fn sample_trajectories<E: Environment + ?Sized>(
    env: &E,
    behavior: &Policy,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..n_episodes)
        .map(|_| rollout(env, behavior, horizon, &mut rng))
        .collect())
}

fn rollout<E: Environment + ?Sized>(env: &E, policy: &Policy, horizon: usize, rng: &mut SimRng) -> Trajectory {
    let mut s = env.reset(rng);
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = sample_categorical(&policy.action_probs(&s), rng);
        let (r, sn) = env.step(&s, a, rng);
        steps.push(Step { s, a, r });
        s = sn;
    }
    Trajectory { steps }
}

/// Mean and standard error of `sum_{t=0}^{T-1} gamma^t r_t` over independent rollouts.
pub fn monte_carlo_return<E: Environment + ?Sized>(
    env: &E,
    policy: &Policy,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = seeded_rng(seed);
    let gamma = env.gamma();
    let returns: Vec<f64> = (0..episodes)
        .map(|_| rollout(env, policy, horizon, &mut rng).discounted_return(gamma))
        .collect();
    mean_and_se(&returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{burn_in_visitation, finite_horizon_return, softmax_policy, TabularMDP};

    fn one_state() -> TabularMDP {
        TabularMDP::new(vec![vec![vec![1.0]]], vec![vec![0.7]], 0.9, vec![1.0]).unwrap()
    }

    #[test]
    fn single_transition_from_trivial_mdp() {
        let pi = Policy::Tabular { probs: vec![vec![1.0]] };
        for mode in [Provenance::IidStateDist, Provenance::SingleTrajectory] {
            let d = sample_transitions(&one_state(), &pi, 1, mode, 3).unwrap();
            assert_eq!(d.len(), 1);
            let t = &d.transitions[0];
            assert_eq!((t.s.clone(), t.a, t.r, t.sn.clone()), (State::Discrete(0), 0, 0.7, State::Discrete(0)));
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let mut rng = crate::mdp::seeded_rng(10);
        let mdp = TabularMDP::random(4, 2, 0.8, 1.0, &mut rng);
        let pi = softmax_policy(&vec![vec![0.0, 1.0]; 4], 1.0).unwrap();
        for mode in [Provenance::IidStateDist, Provenance::SingleTrajectory] {
            let a = sample_transitions(&mdp, &pi, 200, mode, 5).unwrap();
            let b = sample_transitions(&mdp, &pi, 200, mode, 5).unwrap();
            assert_eq!(a, b);
            let c = sample_transitions(&mdp, &pi, 200, mode, 6).unwrap();
            assert_ne!(a, c);
        }
        assert!(sample_transitions(&mdp, &pi, 0, Provenance::IidStateDist, 1).is_err());
    }

    #[test]
    fn iid_reward_mean_matches_visitation() {
        let mut rng = crate::mdp::seeded_rng(11);
        let mdp = TabularMDP::random(3, 2, 0.7, 1.0, &mut rng);
        let pi = softmax_policy(&[vec![0.0, 0.5], vec![1.0, 0.0], vec![0.2, 0.2]], 1.0).unwrap();
        let d = burn_in_visitation(&mdp, &pi);
        let exact: f64 = (0..3)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| d[s][a] * mdp.r[s][a])
            .sum();
        let data = sample_transitions(&mdp, &pi, 10_000, Provenance::IidStateDist, 12).unwrap();
        let (mean, se) = mean_and_se(&data.rewards());
        assert!((mean - exact).abs() < 3.0 * se, "{mean} ± {se} vs {exact}");
    }

    #[test]
    fn trajectories_shape_and_return() {
        let mut rng = crate::mdp::seeded_rng(13);
        let mdp = TabularMDP::random(3, 2, 0.9, 1.0, &mut rng);
        let pi = softmax_policy(&vec![vec![0.3, 0.0]; 3], 0.5).unwrap();
        let one = sample_trajectories(&mdp, &pi, 5, 1, 1).unwrap();
        assert!(one.iter().all(|t| t.steps.len() == 1));
        assert!(sample_trajectories(&mdp, &pi, 5, 0, 1).is_err());

        let trajs = sample_trajectories(&mdp, &pi, 20_000, 10, 2).unwrap();
        let returns: Vec<f64> = trajs.iter().map(|t| t.discounted_return(0.9)).collect();
        let (mean, se) = mean_and_se(&returns);
        let exact = finite_horizon_return(&mdp, &pi, 10);
        assert!((mean - exact).abs() < 3.0 * se);
    }

    #[test]
    fn deterministic_env_gives_identical_trajectories() {
        let mdp = TabularMDP::new(
            vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            0.9,
            vec![1.0, 0.0],
        )
        .unwrap();
        let pi = Policy::Tabular { probs: vec![vec![1.0, 0.0], vec![0.0, 1.0]] };
        let trajs = sample_trajectories(&mdp, &pi, 10, 7, 4).unwrap();
        assert!(trajs.windows(2).all(|w| w[0] == w[1]));
    }
}
