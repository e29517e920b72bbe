//! Optimal averaging: weights minimizing bias, variance or their sum.

use nalgebra::{DMatrix, DVector};

use crate::data::{AvailabilityModel, WeightVector};
use crate::delta::{stat_report, StatReport};
use crate::error::{Result, SpatError};
use crate::moments::{build_variance_matrix_with, MomentSet, VarianceForm};
use crate::qp::{solve_qp, QpProblem, QpSolution};

/// Objective selector shared by the CLI and the Python bindings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Bias,
    Variance,
    Mse,
}

impl std::str::FromStr for Objective {
    type Err = SpatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias" => Ok(Self::Bias),
            "variance" => Ok(Self::Variance),
            "mse" => Ok(Self::Mse),
            other => Err(SpatError::Parse(format!("unknown objective '{other}'"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bias => "bias",
            Self::Variance => "variance",
            Self::Mse => "mse",
        })
    }
}

/// An optimized scheme together with the delta-method statistics of the
/// chosen weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedScheme {
    pub solution: QpSolution,
    pub report: StatReport,
}

pub fn minimize_bias(m: &MomentSet) -> Result<QpSolution> {
    solve_qp(&QpProblem::new(m.d1.clone())?)
}

/// Variance kernel with the reference mean fixed at the truth mean.
pub fn variance_objective(m: &MomentSet, avail: &AvailabilityModel, form: VarianceForm) -> DMatrix<f64> {
    build_variance_matrix_with(m, avail, m.mean_truth, form)
}

pub fn mse_objective(m: &MomentSet, avail: &AvailabilityModel, form: VarianceForm) -> DMatrix<f64> {
    variance_objective(m, avail, form) + &m.d1
}

pub fn minimize_variance(m: &MomentSet, avail: &AvailabilityModel) -> Result<QpSolution> {
    minimize_variance_with(m, avail, VarianceForm::default())
}

pub fn minimize_variance_with(
    m: &MomentSet,
    avail: &AvailabilityModel,
    form: VarianceForm,
) -> Result<QpSolution> {
    solve_qp(&QpProblem::new(variance_objective(m, avail, form))?)
}

pub fn minimize_mse(m: &MomentSet, avail: &AvailabilityModel) -> Result<OptimizedScheme> {
    minimize_mse_with(m, avail, VarianceForm::default())
}

/// Minimizes `b^T (C + D1) b`, then re-evaluates bias and variance of the
/// optimum with the full delta expressions.
pub fn minimize_mse_with(
    m: &MomentSet,
    avail: &AvailabilityModel,
    form: VarianceForm,
) -> Result<OptimizedScheme> {
    let solution = solve_qp(&QpProblem::new(mse_objective(m, avail, form))?)?;
    let report = stat_report(m, &solution.beta, avail)?;
    Ok(OptimizedScheme { solution, report })
}

/// Dispatches on `objective` and attaches the post-hoc statistics.
pub fn optimize(
    m: &MomentSet,
    avail: &AvailabilityModel,
    objective: Objective,
    form: VarianceForm,
) -> Result<OptimizedScheme> {
    let solution = match objective {
        Objective::Bias => minimize_bias(m)?,
        Objective::Variance => minimize_variance_with(m, avail, form)?,
        Objective::Mse => return minimize_mse_with(m, avail, form),
    };
    let report = stat_report(m, &solution.beta, avail)?;
    Ok(OptimizedScheme { solution, report })
}

/// Nonnegative weights summing to one with `sum_k d_k b_k^2 = 0`, which
/// zeroes the missing-data bias term.
///
/// A zero entry wins outright. Otherwise `d_i b_i` is constant within each
/// sign group, so `b_i = a / d_i` on the positive group and `c / |d_i|` on
/// the negative one, and the two constants follow from the balance and
/// normalization conditions.
pub fn minimize_missing_bias_closed_form(d2_diag: &[f64]) -> Result<WeightVector> {
    let n = d2_diag.len();
    if n == 0 {
        return Err(SpatError::DimensionMismatch("empty D2 diagonal".into()));
    }
    if d2_diag.iter().any(|d| !d.is_finite()) {
        return Err(SpatError::NonFinite("D2 diagonal".into()));
    }
    if let Some(i) = d2_diag.iter().position(|&d| d == 0.0) {
        return Ok(WeightVector::unit(n, i));
    }
    let a_sum: f64 = d2_diag.iter().filter(|&&d| d > 0.0).map(|d| 1.0 / d).sum();
    let b_sum: f64 = d2_diag.iter().filter(|&&d| d < 0.0).map(|d| -1.0 / d).sum();
    if a_sum == 0.0 || b_sum == 0.0 {
        return Err(SpatError::InfeasibleSigns);
    }
    let a = 1.0 / (a_sum + (a_sum * b_sum).sqrt());
    let c = a * (a_sum / b_sum).sqrt();
    let beta = d2_diag
        .iter()
        .map(|&d| if d > 0.0 { a / d } else { c / -d })
        .collect();
    WeightVector::normalized(beta)
}

/// First and second directional derivatives of `b^T D1 b` at uniform weights
/// toward the unit vector of site `i` (0-based).
pub fn bias_directional_derivative(m: &MomentSet, i: usize) -> Result<(f64, f64)> {
    directional_derivative(&m.d1, i)
}

pub fn directional_derivative(d1: &DMatrix<f64>, i: usize) -> Result<(f64, f64)> {
    let n = d1.nrows();
    if i >= n {
        return Err(SpatError::IndexOutOfRange { index: i, n });
    }
    if n < 2 {
        return Err(SpatError::InvalidParameter(
            "directional derivative needs at least two sites".into(),
        ));
    }
    let nf = n as f64;
    let norm = ((nf - 1.0) / nf).sqrt();
    let col: f64 = d1.column(i).sum();
    let total: f64 = d1.sum();
    let first = 2.0 / norm * (col / nf - total / (nf * nf));
    let second = 2.0 / (norm * norm) * ((d1[(i, i)] - total / (nf * nf)) - norm * first);
    Ok((first, second))
}

/// `2 dx^T D1 dx / |dx|^2` computed from the explicit direction.
pub fn curvature_along(d1: &DMatrix<f64>, i: usize) -> f64 {
    let n = d1.nrows();
    let mut dx = DVector::from_element(n, -1.0 / n as f64);
    dx[i] += 1.0;
    2.0 * dx.dot(&(d1 * &dx)) / dx.norm_squared()
}
