use nalgebra::{DMatrix, DVector};

use super::spectral::{bisect, pinv_solution, quad_value, trust_region, Spectral, TrustRegion};
use super::{
    ActiveConstraints, QcqpProblem, QcqpSolution, Sense, SolveStatus, DEFAULT_MAX_ITERS, FEAS_TOL, KKT_TOL,
};
use crate::Result;

const INNER_ITERS: usize = 2000;

/// Spectral reduction of one problem, reusable across both senses.
pub struct QcqpPlan<'a> {
    problem: &'a QcqpProblem,
    spectral: Spectral,
    g: DVector<f64>,
    s: f64,
    ball_min: Option<TrustRegion>,
    max_iters: usize,
}

struct Candidate {
    coords: DVector<f64>,
    perp: Option<DVector<f64>>,
    mu: [f64; 2],
    iterations: usize,
}

/// Data-space quantities evaluated against the original matrices.
struct Check {
    theta: DVector<f64>,
    q: f64,
    norm_sq: f64,
    /// `Zᵀ M (Zθ − target)`.
    grad: DVector<f64>,
}

impl<'a> QcqpPlan<'a> {
    pub fn new(problem: &'a QcqpProblem) -> Result<Self> {
        problem.validate()?;
        let spectral = Spectral::new(&problem.z, &problem.m);
        let t = DVector::from_column_slice(&problem.target);
        let g = spectral.linear_coords(&t);
        let s = t.dot(&(&problem.m * &t));
        let ball_min = problem
            .ball_radius_sq
            .is_finite()
            .then(|| trust_region(&spectral.d, &g, s, problem.ball_radius_sq));
        Ok(QcqpPlan {
            problem,
            spectral,
            g,
            s,
            ball_min,
            max_iters: DEFAULT_MAX_ITERS,
        })
    }

    /// Smallest value of the quadratic constraint over the ball.
    pub fn min_constraint_value(&self) -> f64 {
        self.ball_min.as_ref().map_or_else(|| self.unconstrained_min(), |tr| tr.value)
    }

    fn unconstrained_min(&self) -> f64 {
        quad_value(&self.spectral.d, &self.g, self.s, &pinv_solution(&self.spectral.d, &self.g))
    }

    fn q_of(&self, coords: &DVector<f64>) -> f64 {
        quad_value(&self.spectral.d, &self.g, self.s, coords)
    }

    fn check(&self, cand: &Candidate) -> Check {
        let mut theta = self.spectral.lift(&cand.coords);
        if let Some(p) = &cand.perp {
            theta += p;
        }
        let p = self.problem;
        let resid = &p.z * &theta - DVector::from_column_slice(&p.target);
        let m_resid = &p.m * &resid;
        Check {
            q: resid.dot(&m_resid),
            norm_sq: theta.norm_squared(),
            grad: p.z.tr_mul(&m_resid),
            theta,
        }
    }

    fn feasible(&self, chk: &Check) -> bool {
        let p = self.problem;
        chk.q <= p.lambda_k * (1.0 + FEAS_TOL) && chk.norm_sq <= p.ball_radius_sq * (1.0 + FEAS_TOL)
    }

    fn infeasible(&self) -> QcqpSolution {
        let (theta, q) = match &self.ball_min {
            Some(tr) => (self.spectral.lift(&tr.theta), tr.value),
            None => {
                let c = pinv_solution(&self.spectral.d, &self.g);
                (self.spectral.lift(&c), self.unconstrained_min())
            }
        };
        let objective = theta.dot(&DVector::from_column_slice(&self.problem.c));
        QcqpSolution {
            theta: theta.iter().copied().collect(),
            objective,
            status: SolveStatus::Infeasible,
            kkt_residual: f64::NAN,
            active_constraints: ActiveConstraints { quadratic: false, ball: false },
            iterations: 0,
            multipliers: [0.0, 0.0],
            constraint_value: q,
            min_constraint_value: Some(q),
        }
    }

    /// Linear objective under both constraints.
    pub fn solve(&self, sense: Sense) -> QcqpSolution {
        let p = self.problem;
        if self.min_constraint_value() > p.lambda_k * (1.0 + FEAS_TOL) {
            return self.infeasible();
        }
        let sign = match sense {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        };
        let c = DVector::from_column_slice(&p.c) * sign;
        let c_norm = c.norm();
        if c_norm == 0.0 {
            let mut sol = self.min_norm();
            sol.objective = 0.0;
            return sol;
        }
        let cand = self.maximize(&c, c_norm);
        let chk = self.check(&cand);
        let [mu1, mu2] = cand.mu;
        let stat = &c - chk.grad.clone() * (2.0 * mu1) - chk.theta.clone() * (2.0 * mu2);
        let kkt = stat.norm() / c_norm;
        let q_slack_ok = mu1 == 0.0 || (chk.q - p.lambda_k).abs() <= FEAS_TOL * p.lambda_k.max(f64::MIN_POSITIVE);
        let ball_slack_ok = mu2 == 0.0 || (chk.norm_sq - p.ball_radius_sq).abs() <= FEAS_TOL * p.ball_radius_sq;
        let status = if self.feasible(&chk) && kkt <= KKT_TOL && q_slack_ok && ball_slack_ok {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIters
        };
        QcqpSolution {
            objective: chk.theta.dot(&DVector::from_column_slice(&p.c)),
            theta: chk.theta.iter().copied().collect(),
            status,
            kkt_residual: kkt,
            active_constraints: ActiveConstraints {
                quadratic: mu1 > 0.0,
                ball: mu2 > 0.0,
            },
            iterations: cand.iterations,
            multipliers: cand.mu,
            constraint_value: chk.q,
            min_constraint_value: None,
        }
    }

    fn maximize(&self, c: &DVector<f64>, c_norm: f64) -> Candidate {
        let p = self.problem;
        let radius = p.ball_radius_sq.sqrt();
        let d = &self.spectral.d;
        let c_t = self.spectral.coords(c);
        let perp = c - self.spectral.lift(&c_t);
        let perp_sq = perp.norm_squared();
        let has_perp = perp_sq > 1e-28 * c_norm * c_norm;

        // μ₁ = 0: the ball alone decides.
        if radius.is_finite() {
            let coords = &c_t * (radius / c_norm);
            if self.q_of(&coords) <= p.lambda_k {
                return Candidate {
                    coords,
                    perp: has_perp.then(|| &perp * (radius / c_norm)),
                    mu: [0.0, c_norm / (2.0 * radius)],
                    iterations: 0,
                };
            }
        }

        let mut iterations = 0usize;
        // Inner solve: given μ₁ > 0, the ball multiplier and the coordinates.
        let inner = |mu1: f64| -> (DVector<f64>, f64) {
            let a = &c_t + &self.g * (2.0 * mu1);
            let free_ok = !has_perp && (0..d.len()).all(|k| a[k] == 0.0 || d[k] > 0.0);
            if free_ok {
                let coords = DVector::from_fn(d.len(), |k, _| if a[k] == 0.0 { 0.0 } else { a[k] / (2.0 * mu1 * d[k]) });
                if coords.norm_squared() <= p.ball_radius_sq {
                    return (coords, 0.0);
                }
            }
            let at = |mu2: f64| {
                DVector::from_fn(d.len(), |k, _| if a[k] == 0.0 { 0.0 } else { a[k] / (2.0 * mu1 * d[k] + 2.0 * mu2) })
            };
            let norm_sq = |mu2: f64| at(mu2).norm_squared() + if has_perp { perp_sq / (4.0 * mu2 * mu2) } else { 0.0 };
            let hi = (a.norm_squared() + if has_perp { perp_sq } else { 0.0 }).sqrt() / (2.0 * radius);
            if hi == 0.0 {
                return (DVector::zeros(d.len()), 0.0);
            }
            let (_, mu2, _) = bisect(0.0, hi, INNER_ITERS, true, |m2| norm_sq(m2) <= p.ball_radius_sq);
            (at(mu2), mu2)
        };
        let feasible_at = |mu1: f64| -> bool {
            let (coords, _) = inner(mu1);
            self.q_of(&coords) <= p.lambda_k
        };

        let scale = self.spectral.d_max() * radius.min(1e150) + self.g.norm();
        let guess = if scale > 0.0 { c_norm / (2.0 * scale) } else { 1.0 };
        let (mut lo, mut hi);
        if feasible_at(guess) {
            hi = guess;
            lo = guess / 10.0;
            while feasible_at(lo) && lo > 1e-300 {
                hi = lo;
                lo /= 10.0;
                iterations += 1;
            }
            if lo <= 1e-300 {
                lo = 0.0;
            }
        } else {
            lo = guess;
            hi = guess * 10.0;
            while !feasible_at(hi) {
                iterations += 1;
                lo = hi;
                hi *= 10.0;
                if !hi.is_finite() || iterations > 700 {
                    // Feasible set is (numerically) the single point closest to the ellipsoid center.
                    let tr = self.ball_min.as_ref().map(|t| t.theta.clone());
                    let coords = tr.unwrap_or_else(|| pinv_solution(d, &self.g));
                    return Candidate {
                        coords,
                        perp: None,
                        mu: [lo, 0.0],
                        iterations,
                    };
                }
            }
        }
        let budget = self.max_iters.saturating_sub(iterations);
        let (_, mu1, it) = bisect(lo, hi, budget, true, feasible_at);
        iterations += it;
        let (coords, mu2) = inner(mu1);
        Candidate {
            coords,
            perp: (has_perp && mu2 > 0.0).then(|| &perp / (2.0 * mu2)),
            mu: [mu1, mu2],
            iterations,
        }
    }

    /// `min |θ|²` subject to the quadratic constraint only.
    pub fn min_norm(&self) -> QcqpSolution {
        let p = self.problem;
        let lam = p.lambda_k;
        let d = &self.spectral.d;
        let n_coords = d.len();
        let zero = DVector::zeros(n_coords);
        let q_unc = self.unconstrained_min();
        if q_unc > lam * (1.0 + FEAS_TOL) && self.s > lam {
            let mut sol = self.infeasible();
            sol.constraint_value = q_unc;
            sol.min_constraint_value = Some(q_unc);
            sol.theta = self.spectral.lift(&pinv_solution(d, &self.g)).iter().copied().collect();
            return sol;
        }
        let (coords, mu, iterations) = if self.s <= lam {
            (zero, 0.0, 0)
        } else {
            let at = |mu: f64| DVector::from_fn(n_coords, |k, _| mu * self.g[k] / (1.0 + mu * d[k]));
            let feasible_at = |mu: f64| self.q_of(&at(mu)) <= lam;
            let dmax = self.spectral.d_max();
            let mut hi = if dmax > 0.0 { 1.0 / dmax } else { 1.0 };
            let mut lo = 0.0;
            let mut it = 0;
            let mut found = true;
            while !feasible_at(hi) {
                lo = hi;
                hi *= 10.0;
                it += 1;
                if !hi.is_finite() || it > 700 {
                    found = false;
                    break;
                }
            }
            if found {
                let (_, mu, more) = bisect(lo, hi, self.max_iters, true, feasible_at);
                (at(mu), mu, it + more)
            } else {
                (pinv_solution(d, &self.g), lo, it)
            }
        };
        let chk = self.check(&Candidate {
            coords,
            perp: None,
            mu: [mu, 0.0],
            iterations,
        });
        let theta_norm = chk.norm_sq.sqrt();
        let stat = chk.theta.clone() * 2.0 + chk.grad.clone() * (2.0 * mu);
        let kkt = if theta_norm > 0.0 { stat.norm() / (2.0 * theta_norm) } else { 0.0 };
        let slack_ok = mu == 0.0 || (chk.q - lam).abs() <= FEAS_TOL * lam.max(f64::MIN_POSITIVE);
        let status = if chk.q <= lam * (1.0 + FEAS_TOL) && kkt <= KKT_TOL && slack_ok {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIters
        };
        QcqpSolution {
            objective: chk.norm_sq,
            theta: chk.theta.iter().copied().collect(),
            status,
            kkt_residual: kkt,
            active_constraints: ActiveConstraints {
                quadratic: mu > 0.0,
                ball: false,
            },
            iterations,
            multipliers: [mu, 0.0],
            constraint_value: chk.q,
            min_constraint_value: None,
        }
    }
}

pub fn solve_linear_qcqp(problem: &QcqpProblem) -> Result<QcqpSolution> {
    Ok(QcqpPlan::new(problem)?.solve(problem.sense))
}

/// `min |θ|²` subject to `(Zθ − ζ)ᵀ M (Zθ − ζ) ≤ lambda_k`.
pub fn solve_min_norm_qcqp(z: &DMatrix<f64>, m: &DMatrix<f64>, zeta: &[f64], lambda_k: f64) -> Result<QcqpSolution> {
    let problem = QcqpProblem {
        c: vec![0.0; z.ncols()],
        z: z.clone(),
        m: m.clone(),
        target: zeta.to_vec(),
        lambda_k,
        ball_radius_sq: f64::INFINITY,
        sense: Sense::Minimize,
    };
    Ok(QcqpPlan::new(&problem)?.min_norm())
}
