//! Primal active-set solver for `min b^T Q b` subject to `sum(b) = 1, b >= 0`.
//!
//! Multipliers follow the convention `2 Q b = lambda u + rho` with `rho >= 0`
//! and `rho_i b_i = 0`, so `lambda` is the common marginal cost of weight on
//! the support and `rho_i` the extra cost of moving weight onto an excluded
//! site.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::WeightVector;
use crate::error::{Result, SpatError};
use crate::moments::{check_symmetric, min_eigenvalue, symmetrize, PSD_TOL};

/// Ridge added when `Q` has slightly negative eigenvalues, relative to
/// `trace(Q) / n`.
pub const RIDGE_FACTOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    q: DMatrix<f64>,
    ridge: f64,
}

impl QpProblem {
    /// Validates symmetry and semidefiniteness of `Q`. Eigenvalues slightly
    /// below zero (within `1e-8 * trace`) are absorbed by a small ridge.
    pub fn new(mut q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        if n == 0 || q.ncols() != n {
            return Err(SpatError::DimensionMismatch(format!(
                "objective matrix must be square and nonempty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(SpatError::NonFinite("objective matrix".into()));
        }
        check_symmetric(&q, "objective matrix")?;
        symmetrize(&mut q);
        let trace = q.trace();
        let min = min_eigenvalue(&q);
        if min < -PSD_TOL * trace.abs().max(f64::MIN_POSITIVE) {
            return Err(SpatError::NonPsdMatrix { min_eigenvalue: min });
        }
        let mut ridge = 0.0;
        if min < 0.0 {
            ridge = RIDGE_FACTOR * trace / n as f64;
            for i in 0..n {
                q[(i, i)] += ridge;
            }
        }
        Ok(Self { q, ridge })
    }

    /// The matrix actually minimized, ridge included.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub beta: WeightVector,
    pub lambda: f64,
    pub rho: DVector<f64>,
    pub objective: f64,
    /// Largest stationarity violation `|2 (Q b)_i - lambda - rho_i|`.
    pub kkt_residual: f64,
    /// Indices pinned at zero.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub ridge_applied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Defaults to `50 n`.
    pub max_iterations: Option<usize>,
    /// Multipliers above `-dual_tol * n * ||Q||_inf` count as nonnegative.
    pub dual_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iterations: None,
            dual_tol: 1e-12,
        }
    }
}

/// Violations of each optimality condition at a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktCertificate {
    pub stationarity: f64,
    pub complementarity: f64,
    /// `max(0, -min rho)`.
    pub dual_infeasibility: f64,
    /// `max(|sum b - 1|, -min b)`.
    pub primal_infeasibility: f64,
}

impl KktCertificate {
    /// Checks against `1e-8 (1 + ||Q||_inf)` for stationarity and `1e-10`
    /// for everything else.
    pub fn passes(&self, q: &DMatrix<f64>) -> bool {
        self.stationarity <= 1e-8 * (1.0 + inf_norm(q))
            && self.complementarity <= 1e-10
            && self.dual_infeasibility <= 1e-10
            && self.primal_infeasibility <= 1e-10
    }
}

pub fn inf_norm(q: &DMatrix<f64>) -> f64 {
    q.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Evaluates the optimality conditions of `sol` against `q`.
pub fn kkt_certificate(q: &DMatrix<f64>, sol: &QpSolution) -> KktCertificate {
    let b = sol.beta.as_vector();
    let g = 2.0 * (q * b);
    let stationarity = (0..b.len())
        .map(|i| (g[i] - sol.lambda - sol.rho[i]).abs())
        .fold(0.0, f64::max);
    let complementarity = b.iter().zip(sol.rho.iter()).map(|(x, r)| (x * r).abs()).fold(0.0, f64::max);
    let dual_infeasibility = (-sol.rho.min()).max(0.0);
    let primal_infeasibility = (b.sum() - 1.0).abs().max(-b.min()).max(0.0);
    KktCertificate {
        stationarity,
        complementarity,
        dual_infeasibility,
        primal_infeasibility,
    }
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(p, &QpOptions::default())
}

pub fn solve_qp_with(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    let q = &p.q;
    let n = p.dim();
    let max_iter = opts.max_iterations.unwrap_or(50 * n).max(1);
    let qnorm = inf_norm(q);
    let dual_tol = opts.dual_tol * n as f64 * qnorm;

    let mut beta = DVector::from_element(n, 1.0 / n as f64);
    let mut free = vec![true; n];

    for iter in 1..=max_iter {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let target = face_minimizer(q, &idx);

        // longest feasible step toward the face minimizer; ties go to the
        // lowest index
        let mut step = 1.0;
        let mut blocking = None;
        for (k, &i) in idx.iter().enumerate() {
            let d = target[k] - beta[i];
            if d < 0.0 {
                let ratio = beta[i] / -d;
                if ratio < step {
                    step = ratio;
                    blocking = Some(i);
                }
            }
        }
        for (k, &i) in idx.iter().enumerate() {
            beta[i] += step * (target[k] - beta[i]);
        }
        if let Some(i) = blocking {
            beta[i] = 0.0;
            free[i] = false;
            continue;
        }

        let g = 2.0 * (q * &beta);
        let lambda = idx.iter().map(|&i| g[i]).sum::<f64>() / idx.len() as f64;
        let release = (0..n)
            .filter(|&i| !free[i])
            .map(|i| (i, g[i] - lambda))
            .filter(|&(_, r)| r < -dual_tol)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = release {
            free[i] = true;
            continue;
        }

        return finish(q, beta, &free, g, lambda, iter, p.ridge > 0.0);
    }
    Err(SpatError::MaxIterations(max_iter))
}

fn finish(
    q: &DMatrix<f64>,
    mut beta: DVector<f64>,
    free: &[bool],
    g: DVector<f64>,
    lambda: f64,
    iterations: usize,
    ridge_applied: bool,
) -> Result<QpSolution> {
    let n = beta.len();
    for b in beta.iter_mut() {
        *b = b.max(0.0);
    }
    let sum = beta.sum();
    beta /= sum;
    let rho = DVector::from_fn(n, |i, _| if free[i] { 0.0 } else { g[i] - lambda });
    let kkt_residual = (0..n)
        .filter(|&i| free[i])
        .map(|i| (g[i] - lambda).abs())
        .fold(0.0, f64::max);
    let objective = beta.dot(&(q * &beta));
    Ok(QpSolution {
        beta: WeightVector::new(beta.iter().copied().collect())?,
        lambda,
        rho,
        objective,
        kkt_residual,
        active_set: (0..n).filter(|&i| !free[i]).collect(),
        iterations,
        ridge_applied,
    })
}

/// Minimizer of `x^T Q_FF x` over `sum(x) = 1` on the free index set `F`,
/// ignoring bounds.
fn face_minimizer(q: &DMatrix<f64>, free: &[usize]) -> DVector<f64> {
    let f = free.len();
    if f == 1 {
        return DVector::from_element(1, 1.0);
    }
    let qf = DMatrix::from_fn(f, f, |a, b| q[(free[a], free[b])]);
    if let Some(x) = face_by_cholesky(&qf) {
        return x;
    }
    face_by_null_space(&qf)
}

/// `x = Q^{-1} u / (u^T Q^{-1} u)` when `Q_FF` is safely positive definite.
fn face_by_cholesky(qf: &DMatrix<f64>) -> Option<DVector<f64>> {
    let f = qf.nrows();
    let chol = qf.clone().cholesky()?;
    let w = chol.solve(&DVector::from_element(f, 1.0));
    let s = w.sum();
    if !(s > 0.0) || w.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = w / s;
    let g = qf * &x;
    let mean = g.mean();
    let res = g.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let scale = inf_norm(qf) * x.amax().max(1.0);
    (res <= 1e-11 * scale).then_some(x)
}

/// Null-space method with a pseudo-inverse of the reduced Hessian; handles
/// singular faces, where it returns the minimum-norm minimizer.
fn face_by_null_space(qf: &DMatrix<f64>) -> DVector<f64> {
    let f = qf.nrows();
    let x0 = DVector::from_element(f, 1.0 / f as f64);

    // Householder reflector taking u / sqrt(f) to e_1; its remaining columns
    // span the complement of u
    let mut v = DVector::from_element(f, 1.0 / (f as f64).sqrt());
    v[0] -= 1.0;
    let vv = v.norm_squared();
    let h = DMatrix::identity(f, f) - (&v * v.transpose()) * (2.0 / vv);
    let z = h.columns(1, f - 1).into_owned();

    let hred = z.transpose() * qf * &z;
    let rhs = -(z.transpose() * (qf * &x0));
    let eig = SymmetricEigen::new(hred);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = 1e-12 * top;
    let mut y = DVector::zeros(f - 1);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > 0.0 {
            let col = eig.eigenvectors.column(k);
            y += col * (col.dot(&rhs) / lam);
        }
    }
    x0 + z * y
}
