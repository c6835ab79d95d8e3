use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `ZᵀMZ = U diag(d) Uᵀ` restricted to the row space of `Z`.
///
/// Directions orthogonal to the columns of `U` leave `Zθ` unchanged.
pub(crate) struct Spectral {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    /// `M Z U`, so that `Uᵀ Zᵀ M t = mzuᵀ t`.
    pub mzu: DMatrix<f64>,
}

impl Spectral {
    pub fn new(z: &DMatrix<f64>, m: &DMatrix<f64>) -> Self {
        let (n, dim) = z.shape();
        if dim <= n {
            let mz = m * z;
            let g = symmetrize(z.tr_mul(&mz));
            let eig = SymmetricEigen::new(g);
            let u = eig.eigenvectors;
            let mzu = &mz * &u;
            Spectral {
                d: eig.eigenvalues.map(|x| x.max(0.0)),
                u,
                mzu,
            }
        } else {
            // Zᵀ = Q R, so ZᵀMZ = Q (R M Rᵀ) Qᵀ and Z Q = Rᵀ.
            let qr = z.transpose().qr();
            let q = qr.q();
            let r = qr.r();
            let reduced = symmetrize(&r * m * r.transpose());
            let eig = SymmetricEigen::new(reduced);
            let u = &q * &eig.eigenvectors;
            let mzu = m * r.transpose() * &eig.eigenvectors;
            Spectral {
                d: eig.eigenvalues.map(|x| x.max(0.0)),
                u,
                mzu,
            }
        }
    }

    pub fn d_max(&self) -> f64 {
        self.d.max().max(0.0)
    }

    /// Coordinates of `ZᵀM t`.
    pub fn linear_coords(&self, t: &DVector<f64>) -> DVector<f64> {
        self.mzu.tr_mul(t)
    }

    pub fn coords(&self, x: &DVector<f64>) -> DVector<f64> {
        self.u.tr_mul(x)
    }

    pub fn lift(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.u * coords
    }
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// `Σ d θ² − 2 gᵀθ + s` in spectral coordinates.
pub(crate) fn quad_value(d: &DVector<f64>, g: &DVector<f64>, s: f64, theta: &DVector<f64>) -> f64 {
    let mut acc = crate::numeric::CompensatedSum::new();
    acc.add(s);
    for k in 0..d.len() {
        acc.add(theta[k] * (d[k] * theta[k] - 2.0 * g[k]));
    }
    acc.value()
}

/// Narrows `[lo, hi]` around the switch point of a monotone predicate with
/// `pred(lo) == false` and `pred(hi) == true`. With `log_scale` the bracket
/// must be nonnegative and is split geometrically while it spans more than a
/// factor of two.
pub(crate) fn bisect(
    mut lo: f64,
    mut hi: f64,
    max_iter: usize,
    log_scale: bool,
    mut pred: impl FnMut(f64) -> bool,
) -> (f64, f64, usize) {
    let mut it = 0;
    while it < max_iter {
        let mid = if log_scale && lo == 0.0 {
            hi * (1.0 / 1024.0)
        } else if log_scale && hi > 2.0 * lo {
            (lo * hi).sqrt()
        } else {
            lo + 0.5 * (hi - lo)
        };
        if !(mid > lo && mid < hi) || mid < 1e-300 && log_scale {
            break;
        }
        it += 1;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi.abs().max(lo.abs()) {
            break;
        }
    }
    (lo, hi, it)
}

/// Minimizer of `Σ d θ² − 2 gᵀθ + s` over `|θ|² ≤ radius_sq`.
pub(crate) struct TrustRegion {
    pub theta: DVector<f64>,
    pub nu: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Eigenvalues below this fraction of the largest are treated as zero when
/// forming pseudo-inverse solutions.
pub(crate) const PINV_RTOL: f64 = 1e-14;

pub(crate) fn pinv_solution(d: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let thr = PINV_RTOL * d.max().max(0.0);
    DVector::from_fn(d.len(), |k, _| if d[k] > thr { g[k] / d[k] } else { 0.0 })
}

pub(crate) fn trust_region(d: &DVector<f64>, g: &DVector<f64>, s: f64, radius_sq: f64) -> TrustRegion {
    let free = pinv_solution(d, g);
    if free.norm_squared() <= radius_sq {
        let value = quad_value(d, g, s, &free);
        return TrustRegion {
            theta: free,
            nu: 0.0,
            value,
            iterations: 0,
        };
    }
    let at = |nu: f64| DVector::from_fn(d.len(), |k, _| if g[k] == 0.0 { 0.0 } else { g[k] / (d[k] + nu) });
    let hi = g.norm() / radius_sq.sqrt();
    let (_, nu, iterations) = bisect(0.0, hi, 2000, true, |nu| at(nu).norm_squared() <= radius_sq);
    let theta = at(nu);
    let value = quad_value(d, g, s, &theta);
    TrustRegion {
        theta,
        nu,
        value,
        iterations,
    }
}
