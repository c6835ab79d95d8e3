use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spectral::{bisect, trust_region, Spectral, TrustRegion};
use super::{Sense, SolveStatus, FEAS_TOL, KKT_TOL};
use crate::{Error, Result};

/// `max/min η` over `(θ, η)` subject to
/// `(Zθ + η·1 − target)ᵀ M (Zθ + η·1 − target) ≤ lambda_k`,
/// `|θ|² ≤ ball_radius_sq` and `|η| ≤ r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRewardProblem {
    pub z: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub target: Vec<f64>,
    pub lambda_k: f64,
    pub r_max: f64,
    pub ball_radius_sq: f64,
    pub sense: Sense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRewardSolution {
    pub eta: f64,
    pub theta: Vec<f64>,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub constraint_value: f64,
    pub box_active: bool,
    pub min_constraint_value: Option<f64>,
}

struct Reduced {
    spectral: Spectral,
    g_target: DVector<f64>,
    g_ones: DVector<f64>,
    /// `tᵀMt`, `1ᵀMt`, `1ᵀM1`.
    s_tt: f64,
    s_1t: f64,
    s_11: f64,
    radius_sq: f64,
}

impl Reduced {
    /// Best `θ` in the ball for a fixed `η`.
    fn at(&self, eta: f64) -> TrustRegion {
        let g = &self.g_target - &self.g_ones * eta;
        let s = self.s_tt - 2.0 * eta * self.s_1t + eta * eta * self.s_11;
        trust_region(&self.spectral.d, &g, s, self.radius_sq)
    }
}

fn validate(p: &AverageRewardProblem) -> Result<()> {
    let (n, _) = p.z.shape();
    if p.m.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, got: p.m.nrows() });
    }
    if p.target.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.target.len() });
    }
    if !(p.lambda_k >= 0.0 && p.r_max >= 0.0 && p.ball_radius_sq > 0.0) {
        return Err(Error::InvalidArgument(
            "lambda_k and r_max must be nonnegative and the ball radius positive".into(),
        ));
    }
    Ok(())
}

/// Convex minimization of `f` on `[a, b]` by golden-section search.
fn golden_min(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut it = 0;
    while b - a > 1e-13 * (1.0 + a.abs().max(b.abs())) && it < 300 {
        it += 1;
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    let (x, fx) = [(x, fx), (x1, f1), (x2, f2)]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 < best.1 { cand } else { best });
    (x, fx, it)
}

pub fn solve_average_reward_program(p: &AverageRewardProblem) -> Result<AverageRewardSolution> {
    validate(p)?;
    let n = p.target.len();
    let t = DVector::from_column_slice(&p.target);
    let ones = DVector::from_element(n, 1.0);
    let spectral = Spectral::new(&p.z, &p.m);
    let mt = &p.m * &t;
    let m1 = &p.m * &ones;
    let red = Reduced {
        g_target: spectral.linear_coords(&t),
        g_ones: spectral.linear_coords(&ones),
        spectral,
        s_tt: t.dot(&mt),
        s_1t: ones.dot(&mt),
        s_11: ones.dot(&m1),
        radius_sq: p.ball_radius_sq,
    };
    let lam = p.lambda_k;
    let f = |eta: f64| red.at(eta).value;

    let (eta_star, f_star, mut iterations) = golden_min(-p.r_max, p.r_max, f);
    if f_star > lam * (1.0 + FEAS_TOL) {
        let tr = red.at(eta_star);
        return Ok(AverageRewardSolution {
            eta: eta_star,
            theta: red.spectral.lift(&tr.theta).iter().copied().collect(),
            status: SolveStatus::Infeasible,
            kkt_residual: f64::NAN,
            iterations,
            constraint_value: f_star,
            box_active: false,
            min_constraint_value: Some(f_star),
        });
    }

    let (sigma, edge) = match p.sense {
        Sense::Maximize => (1.0, p.r_max),
        Sense::Minimize => (-1.0, -p.r_max),
    };
    let (eta, box_active) = if f(edge) <= lam {
        (edge, true)
    } else {
        let (e, it) = match p.sense {
            Sense::Maximize => {
                let (lo, _, it) = bisect(eta_star, edge, 4000, false, |e| f(e) > lam);
                (lo, it)
            }
            Sense::Minimize => {
                let (_, hi, it) = bisect(edge, eta_star, 4000, false, |e| f(e) <= lam);
                (hi, it)
            }
        };
        iterations += it;
        (e, false)
    };

    let tr = red.at(eta);
    iterations += tr.iterations;
    let theta = red.spectral.lift(&tr.theta);
    let w = &p.z * &theta + &ones * eta - &t;
    let mw = &p.m * &w;
    let q = w.dot(&mw);
    let (kkt, slack_ok) = if box_active {
        (0.0, true)
    } else {
        // η-stationarity fixes μ₁; the ball multiplier is μ₁ times the trust-region shift.
        let a = ones.dot(&mw);
        let mu1 = if sigma * a > 0.0 { sigma / (2.0 * a) } else { 0.0 };
        let mu2 = mu1 * tr.nu;
        let grad = p.z.tr_mul(&mw) * (2.0 * mu1) + &theta * (2.0 * mu2);
        let eta_resid = sigma - 2.0 * mu1 * a;
        let res = (grad.norm_squared() + eta_resid * eta_resid).sqrt();
        let slack = mu1 == 0.0 || (q - lam).abs() <= FEAS_TOL * lam.max(f64::MIN_POSITIVE);
        (res, slack)
    };
    let feasible = q <= lam * (1.0 + FEAS_TOL) && theta.norm_squared() <= p.ball_radius_sq * (1.0 + FEAS_TOL);
    let status = if feasible && kkt <= KKT_TOL && slack_ok {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIters
    };
    Ok(AverageRewardSolution {
        eta,
        theta: theta.iter().copied().collect(),
        status,
        kkt_residual: kkt,
        iterations,
        constraint_value: q,
        box_active,
        min_constraint_value: None,
    })
}
