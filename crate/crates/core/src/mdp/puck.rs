use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Environment, SimRng, State, StateSpace};

/// A puck in the parabolic valley `height = position^2` on `[-1, 1]`.
///
/// State is `(position, velocity)`; actions push left, do nothing, or push
/// right. Hitting a wall reverses the velocity at half speed. The reward
/// scores height plus kinetic energy and is clipped to `[-r_max, r_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuckEnv {
    pub noise_std: f64,
    pub r_max: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_push")]
    pub push: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Half-width of the uniform jitter on the initial position.
    #[serde(default = "default_init_spread")]
    pub init_spread: f64,
}

fn default_gamma() -> f64 {
    0.95
}
fn default_push() -> f64 {
    0.01
}
fn default_gravity() -> f64 {
    0.01
}
fn default_init_spread() -> f64 {
    0.1
}

impl PuckEnv {
    pub fn new(noise_std: f64, r_max: f64) -> Self {
        assert!(noise_std >= 0.0, "noise_std must be nonnegative");
        PuckEnv {
            noise_std,
            r_max,
            gamma: default_gamma(),
            push: default_push(),
            gravity: default_gravity(),
            init_spread: default_init_spread(),
        }
    }

    pub fn reward(&self, position: f64, velocity: f64) -> f64 {
        let score = 2.0 * position * position + 50.0 * velocity * velocity - 0.5;
        score.clamp(-self.r_max, self.r_max)
    }

    /// Deterministic part of the dynamics.
    pub fn drift(&self, position: f64, velocity: f64, action: usize) -> (f64, f64) {
        let force = self.push * (action as f64 - 1.0) - self.gravity * 2.0 * position;
        let mut v = velocity + force;
        let mut p = position + v;
        if p > 1.0 {
            p = 1.0;
            v = -0.5 * v;
        } else if p < -1.0 {
            p = -1.0;
            v = -0.5 * v;
        }
        (p, v)
    }
}

/// Builds the puck environment with default dynamics constants.
pub fn puck_env(noise_std: f64, r_max: f64) -> PuckEnv {
    PuckEnv::new(noise_std, r_max)
}

impl Environment for PuckEnv {
    fn n_actions(&self) -> usize {
        3
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Continuous { dim: 2 }
    }
    fn r_max(&self) -> f64 {
        self.r_max
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn reset(&self, rng: &mut SimRng) -> State {
        let p = if self.init_spread > 0.0 {
            rng.random_range(-self.init_spread..=self.init_spread)
        } else {
            0.0
        };
        State::Continuous(vec![p, 0.0])
    }
    fn step(&self, s: &State, a: usize, rng: &mut SimRng) -> (f64, State) {
        let State::Continuous(x) = s else {
            panic!("puck environment requires a continuous state");
        };
        let (mut p, mut v) = self.drift(x[0], x[1], a);
        if self.noise_std > 0.0 {
            let e1: f64 = StandardNormal.sample(rng);
            let e2: f64 = StandardNormal.sample(rng);
            p = (p + self.noise_std * e1).clamp(-1.0, 1.0);
            v += 0.1 * self.noise_std * e2;
        }
        (self.reward(p, v), State::Continuous(vec![p, v]))
    }
}
