//! Truncated importance-sampling lower bound on the normalized finite-horizon
//! return, used as a comparison point for the kernel bounds.

use serde::{Deserialize, Serialize};

use crate::mdp::{Policy, Trajectory};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// Affine map from discounted `T`-step returns onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub r_min_return: f64,
    pub r_max_return: f64,
    pub gamma: f64,
    pub horizon: usize,
}

impl NormalizationSpec {
    /// Extremes `±Σ_{t=1}^T γ^{t−1} r_max`.
    pub fn analytic(r_max: f64, gamma: f64, horizon: usize) -> Self {
        let total: f64 = (0..horizon).map(|t| gamma.powi(t as i32) * r_max).sum();
        NormalizationSpec {
            r_min_return: -total,
            r_max_return: total,
            gamma,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_max_return > self.r_min_return) {
            return Err(Error::InvalidArgument(format!(
                "normalization range [{}, {}] is empty",
                self.r_min_return, self.r_max_return
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, ret: f64) -> f64 {
        (ret - self.r_min_return) / (self.r_max_return - self.r_min_return)
    }
}

/// `log Π_t π(a_t|s_t) / π₀(a_t|s_t)`.
pub fn log_is_weight(trajectory: &Trajectory, behavior: &Policy, target: &Policy) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for (t, step) in trajectory.steps.iter().enumerate() {
        let pb = behavior.prob(&step.s, step.a);
        if !(pb > 0.0) {
            return Err(Error::UnsupportedAction { step: t, action: step.a });
        }
        let pt = target.prob(&step.s, step.a);
        if pt == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        acc.add(pt.ln() - pb.ln());
    }
    Ok(acc.value())
}

pub fn is_weight(trajectory: &Trajectory, behavior: &Policy, target: &Policy) -> Result<f64> {
    log_is_weight(trajectory, behavior, target).map(f64::exp)
}

pub fn normalized_return(trajectory: &Trajectory, spec: &NormalizationSpec) -> Result<f64> {
    spec.validate()?;
    let ret = trajectory.discounted_return(spec.gamma);
    let slack = 1e-12 * (spec.r_max_return - spec.r_min_return);
    if ret < spec.r_min_return - slack || ret > spec.r_max_return + slack {
        return Err(Error::ReturnOutOfRange {
            value: ret,
            min: spec.r_min_return,
            max: spec.r_max_return,
        });
    }
    Ok(spec.normalize(ret).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsEstimate {
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    pub c: f64,
    pub lower_bound: f64,
    pub delta: f64,
    /// The first of the three terms; the bound never exceeds it.
    pub empirical_mean: f64,
}

/// Lower bound from precomputed weighted returns `X_i` with a common threshold `c`.
pub fn truncated_is_bound(x_values: Vec<f64>, c: f64, delta: f64) -> Result<IsEstimate> {
    let n = x_values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 trajectories, got {n}")));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold c must be positive, got {c}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let nf = n as f64;
    let y_values: Vec<f64> = x_values.iter().map(|x| x.min(c)).collect();
    // With c_i = c the prefactor (Σ 1/c_i)⁻¹ is c / N.
    let prefactor = c / nf;
    let log_term = (2.0 / delta).ln();
    let scaled: Vec<f64> = y_values.iter().map(|y| y / c).collect();
    let empirical_mean = prefactor * crate::numeric::compensated_sum(scaled.iter().copied());
    let second = prefactor * 7.0 * nf * log_term / (3.0 * (nf - 1.0));
    let mut pair = CompensatedSum::new();
    for a in &scaled {
        for b in &scaled {
            pair.add((a - b) * (a - b));
        }
    }
    let third = prefactor * (log_term / (nf - 1.0) * pair.value()).sqrt();
    Ok(IsEstimate {
        x_values,
        y_values,
        c,
        lower_bound: empirical_mean - second - third,
        delta,
        empirical_mean,
    })
}

pub fn is_lower_bound(
    trajectories: &[Trajectory],
    behavior: &Policy,
    target: &Policy,
    c: f64,
    delta: f64,
    spec: &NormalizationSpec,
) -> Result<IsEstimate> {
    let x = trajectories
        .iter()
        .map(|tr| Ok(normalized_return(tr, spec)? * is_weight(tr, behavior, target)?))
        .collect::<Result<Vec<f64>>>()?;
    truncated_is_bound(x, c, delta)
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub delta: f64,
    pub c: f64,
    pub lower_bound: f64,
}

/// Lower bounds for each threshold in `cs` on the same weighted returns.
pub fn threshold_sweep(
    trajectories: &[Trajectory],
    behavior: &Policy,
    target: &Policy,
    cs: &[f64],
    delta: f64,
    spec: &NormalizationSpec,
) -> Result<Vec<ThresholdRow>> {
    let x = trajectories
        .iter()
        .map(|tr| Ok(normalized_return(tr, spec)? * is_weight(tr, behavior, target)?))
        .collect::<Result<Vec<f64>>>()?;
    cs.iter()
        .map(|&c| {
            let est = truncated_is_bound(x.clone(), c, delta)?;
            Ok(ThresholdRow {
                n: x.len(),
                delta,
                c,
                lower_bound: est.lower_bound,
            })
        })
        .collect()
}
