//! Gaussian RBF kernels and random Fourier feature maps.
//!
//! The Bellman statistic uses `K(x, y) = exp(-|x - y|^2 / h^2)` on encoded
//! state-action vectors. Q-functions are linear in a random Fourier feature
//! map `Φ_k(x) = scale · cos(μ_kᵀx + b_k)` with `μ_k ~ N(0, I / h0^2)` and
//! `b_k ~ U[0, 2π]`. With the default `scale = √2` the implied kernel
//! `(1/m) Φ(x)ᵀΦ(y)` converges to `exp(-|x - y|^2 / (2 h0^2))`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mdp::{seeded_rng, ActionValue, State, StateSpace};
use crate::numeric::{dot, sq_dist};
use crate::{Error, Result};

/// Largest value the RBF kernel takes.
pub const RBF_K_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub bandwidth: f64,
}

impl RbfKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(RbfKernel { bandwidth })
    }

    /// Panics on a dimension mismatch; see [`rbf_eval`] for the checked form.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), y.len(), "kernel arguments differ in dimension");
        (-sq_dist(x, y) / (self.bandwidth * self.bandwidth)).exp()
    }

    /// Unscaled Gram matrix `K(x_i, x_j)`.
    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            g[(i, i)] = 1.0;
            for j in 0..i {
                let k = self.eval(&points[i], &points[j]);
                g[(i, j)] = k;
                g[(j, i)] = k;
            }
        }
        g
    }
}

pub fn rbf_eval(kernel: &RbfKernel, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(kernel.eval(x, y))
}

/// `M_ij = K(x_i, x_j) / n^2`.
pub fn scaled_gram(kernel: &RbfKernel, points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len() as f64;
    kernel.gram(points) / (n * n)
}

/// Distinct points with their multiplicities, in first-occurrence order.
pub fn dedup_points(points: &[Vec<f64>]) -> Vec<(usize, Vec<f64>)> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for p in points {
        let key: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
        match index.get(&key) {
            Some(&i) => out[i].0 += 1,
            None => {
                index.insert(key, out.len());
                out.push((1, p.clone()));
            }
        }
    }
    out
}

/// Median pairwise Euclidean distance.
pub fn median_bandwidth(points: &[Vec<f64>]) -> Result<f64> {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in 0..i {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return Err(Error::DegeneratePointCloud);
    }
    let med = crate::numeric::median(&d);
    if med > 0.0 {
        Ok(med)
    } else if d.iter().any(|x| *x > 0.0) {
        // more than half the pairs coincide; fall back to the median of nonzero distances
        let nz: Vec<f64> = d.into_iter().filter(|x| *x > 0.0).collect();
        Ok(crate::numeric::median(&nz))
    } else {
        Err(Error::DegeneratePointCloud)
    }
}

/// Random Fourier feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub m: usize,
    pub h0: f64,
    pub scale: f64,
    pub mu: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

pub fn make_rff(input_dim: usize, m: usize, h0: f64, seed: u64) -> Result<FeatureMap> {
    make_rff_with_scale(input_dim, m, h0, seed, std::f64::consts::SQRT_2)
}

/// Same draws as [`make_rff`] with an arbitrary amplitude; `scale = 1`
/// gives the plain cosine features whose implied kernel is half the Gaussian.
pub fn make_rff_with_scale(input_dim: usize, m: usize, h0: f64, seed: u64, scale: f64) -> Result<FeatureMap> {
    if m == 0 {
        return Err(Error::InvalidArgument("feature count must be positive".into()));
    }
    if !(h0 > 0.0) {
        return Err(Error::InvalidArgument(format!("h0 must be positive, got {h0}")));
    }
    let mut rng = seeded_rng(seed);
    let mut mu = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for _ in 0..m {
        mu.push(
            (0..input_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z / h0
                })
                .collect(),
        );
        b.push(rng.random::<f64>() * 2.0 * PI);
    }
    Ok(FeatureMap { m, h0, scale, mu, b })
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "feature input dimension");
        self.mu
            .iter()
            .zip(&self.b)
            .map(|(w, b)| self.scale * (dot(w, x) + b).cos())
            .collect()
    }

    /// Feature rows for a batch of points (`n × m`).
    pub fn feature_matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(points.len(), self.m);
        for (i, p) in points.iter().enumerate() {
            for (k, v) in self.features(p).into_iter().enumerate() {
                out[(i, k)] = v;
            }
        }
        out
    }

    /// `(1/m) Φ(x)ᵀΦ(y)`.
    pub fn implied_kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(&self.features(x), &self.features(y)) / self.m as f64
    }

    /// Gaussian bandwidth (in [`RbfKernel`] convention) that the implied kernel approaches.
    pub fn limit_kernel(&self) -> RbfKernel {
        RbfKernel {
            bandwidth: std::f64::consts::SQRT_2 * self.h0,
        }
    }

    /// Same frequencies and offsets with a different bandwidth `h0`.
    pub fn rescaled(&self, h0: f64) -> FeatureMap {
        let ratio = self.h0 / h0;
        FeatureMap {
            m: self.m,
            h0,
            scale: self.scale,
            mu: self.mu.iter().map(|w| w.iter().map(|v| v * ratio).collect()).collect(),
            b: self.b.clone(),
        }
    }
}

/// Maps `(state, action)` to the vector on which kernels and features act:
/// the state (one-hot for tabular states) followed by a scaled one-hot action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateActionEncoder {
    pub space: StateSpace,
    pub n_actions: usize,
    #[serde(default = "one")]
    pub action_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl StateActionEncoder {
    pub fn new(space: StateSpace, n_actions: usize) -> Self {
        StateActionEncoder {
            space,
            n_actions,
            action_scale: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        let state_dim = match self.space {
            StateSpace::Discrete { n_states } => n_states,
            StateSpace::Continuous { dim } => dim,
        };
        state_dim + self.n_actions
    }

    pub fn encode(&self, s: &State, a: usize) -> Vec<f64> {
        assert!(a < self.n_actions, "action {a} out of range");
        let mut v = Vec::with_capacity(self.dim());
        match (&self.space, s) {
            (StateSpace::Discrete { n_states }, State::Discrete(i)) => {
                assert!(i < n_states, "state {i} out of range");
                v.extend((0..*n_states).map(|k| if k == *i { 1.0 } else { 0.0 }));
            }
            (StateSpace::Continuous { dim }, State::Continuous(x)) => {
                assert_eq!(x.len(), *dim, "state dimension");
                v.extend_from_slice(x);
            }
            _ => panic!("state does not belong to the encoder's state space"),
        }
        v.extend((0..self.n_actions).map(|k| if k == a { self.action_scale } else { 0.0 }));
        v
    }
}

/// `Q(x) = θᵀΦ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    pub theta: Vec<f64>,
    pub feature_map: FeatureMap,
    pub encoder: StateActionEncoder,
}

impl QFunction {
    pub fn new(theta: Vec<f64>, feature_map: FeatureMap, encoder: StateActionEncoder) -> Result<Self> {
        if theta.len() != feature_map.m {
            return Err(Error::DimensionMismatch {
                expected: feature_map.m,
                got: theta.len(),
            });
        }
        if encoder.dim() != feature_map.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: feature_map.input_dim(),
                got: encoder.dim(),
            });
        }
        Ok(QFunction {
            theta,
            feature_map,
            encoder,
        })
    }

    pub fn zero(feature_map: FeatureMap, encoder: StateActionEncoder) -> Self {
        let m = feature_map.m;
        QFunction {
            theta: vec![0.0; m],
            feature_map,
            encoder,
        }
    }

    /// Squared RKHS norm under the implied kernel: `m |θ|²`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        self.feature_map.m as f64 * dot(&self.theta, &self.theta)
    }

    pub fn eval_encoded(&self, x: &[f64]) -> f64 {
        dot(&self.theta, &self.feature_map.features(x))
    }
}

impl ActionValue for QFunction {
    fn value(&self, s: &State, a: usize) -> f64 {
        self.eval_encoded(&self.encoder.encode(s, a))
    }
}

/// Minimum-norm least-squares `θ` with `Φ(points) θ ≈ values`; returns `θ`
/// and the largest absolute fit residual.
pub fn project_onto_features(fm: &FeatureMap, points: &[Vec<f64>], values: &[f64]) -> Result<(Vec<f64>, f64)> {
    if points.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: values.len(),
        });
    }
    let phi = fm.feature_matrix(points);
    let y = DVector::from_column_slice(values);
    let svd = phi.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let theta = svd.solve(&y, tol).map_err(|e| Error::InvalidArgument(e.into()))?;
    let resid = (&phi * &theta - y).amax();
    Ok((theta.iter().copied().collect(), resid))
}
