//! Moment matrices of the observed field.
//!
//! Everything the delta-method estimators and the weight optimizers need is
//! collected once into a [`MomentSet`]: per-site means, the observation
//! covariance `S_r`, the deviation kernel `D_1`, the mean offsets from the
//! true average (`D_2`) and their squares (`F`).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{validate_panel, AvailabilityModel, NoiseModel, ObservationPanel, TruthSeries};
use crate::error::{Result, SpatError};

/// Relative tolerance for the smallest admissible eigenvalue of a PSD matrix.
pub const PSD_TOL: f64 = 1e-8;
/// Absolute tolerance on `|A - A^T|`, scaled by the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Normalization of temporal covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovNormalization {
    /// Divide by `N - 1`.
    #[default]
    Unbiased,
    /// Divide by `N`; the moments of the empirical distribution over time.
    Population,
}

impl CovNormalization {
    fn divisor(self, steps: usize) -> f64 {
        match self {
            CovNormalization::Unbiased => (steps - 1) as f64,
            CovNormalization::Population => steps as f64,
        }
    }
}

/// Which quadratic form stands in for the missing-data variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceForm {
    /// `C = S_r / a + (1 - a)/a * F`.
    #[default]
    Compact,
    /// Term-by-term expansion of the delta variance with `mu` held fixed:
    /// covariances keep unit coefficient and only the diagonal is inflated,
    /// `C = S_r + (1 - a)/a * (diag(S_r) + F)`.
    Expanded,
}

/// Moment statistics of a panel against its truth series.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    /// Time mean of each site, the estimate of `E r_i = E v_i`.
    pub mean_obs: DVector<f64>,
    /// Observation covariance `S_r`.
    pub cov_obs: DMatrix<f64>,
    /// `(1/N) sum_t d(t) d(t)^T` with `d_i(t) = r_i(t) - v(t)`.
    pub d1: DMatrix<f64>,
    /// `E r_i - E v`.
    pub d2_diag: DVector<f64>,
    /// `(E r_i - E v)^2`.
    pub f_diag: DVector<f64>,
    /// Inflated second moment at [`MomentSet::alpha`].
    pub zeta_sq: DVector<f64>,
    /// Availability the `zeta_sq` field was evaluated at.
    pub alpha: f64,
    /// Time mean of the truth series.
    pub mean_truth: f64,
    pub sigma_eps_sq: f64,
    pub normalization: CovNormalization,
    pub n_steps: usize,
}

impl MomentSet {
    pub fn n_sites(&self) -> usize {
        self.mean_obs.len()
    }

    /// `E v_i^2 - a (E v_i)^2`, written through observable moments as
    /// `S_r,ii - sigma_eps^2 + (1 - a) (E r_i)^2`.
    pub fn zeta_sq_at(&self, alpha: f64) -> DVector<f64> {
        DVector::from_fn(self.n_sites(), |i, _| {
            let m = self.mean_obs[i];
            self.cov_obs[(i, i)] - self.sigma_eps_sq + (1.0 - alpha) * m * m
        })
    }

    /// Assembles a moment set from externally supplied parts and checks every
    /// structural invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mean_obs: DVector<f64>,
        cov_obs: DMatrix<f64>,
        d1: DMatrix<f64>,
        mean_truth: f64,
        sigma_eps_sq: f64,
        alpha: f64,
        normalization: CovNormalization,
        n_steps: usize,
    ) -> Result<Self> {
        let n = mean_obs.len();
        if n == 0 {
            return Err(SpatError::DegeneratePanel("no sites".into()));
        }
        if cov_obs.shape() != (n, n) || d1.shape() != (n, n) {
            return Err(SpatError::DimensionMismatch(format!(
                "moment matrices must be {n}x{n}"
            )));
        }
        if n_steps < 2 {
            return Err(SpatError::DegeneratePanel("fewer than 2 time steps".into()));
        }
        let finite = mean_obs.iter().chain(cov_obs.iter()).chain(d1.iter()).all(|v| v.is_finite())
            && mean_truth.is_finite()
            && sigma_eps_sq.is_finite();
        if !finite {
            return Err(SpatError::NonFinite("moment set".into()));
        }
        if sigma_eps_sq < 0.0 {
            return Err(SpatError::InvalidParameter("negative noise variance".into()));
        }
        AvailabilityModel::new(alpha)?;
        check_symmetric(&cov_obs, "observation covariance")?;
        check_symmetric(&d1, "D1")?;
        check_psd(&cov_obs)?;
        check_psd(&d1)?;

        let d2_diag = mean_obs.add_scalar(-mean_truth);
        let f_diag = d2_diag.map(|d| d * d);
        let mut m = Self {
            mean_obs,
            cov_obs,
            d1,
            d2_diag,
            f_diag,
            zeta_sq: DVector::zeros(n),
            alpha,
            mean_truth,
            sigma_eps_sq,
            normalization,
            n_steps,
        };
        m.zeta_sq = m.zeta_sq_at(alpha);
        Ok(m)
    }

    /// Restrict to a subset of sites, in the given order.
    pub fn select(&self, sites: &[usize]) -> Result<Self> {
        let n = self.n_sites();
        if let Some(&i) = sites.iter().find(|&&i| i >= n) {
            return Err(SpatError::IndexOutOfRange { index: i, n });
        }
        let k = sites.len();
        Self::from_parts(
            DVector::from_fn(k, |a, _| self.mean_obs[sites[a]]),
            DMatrix::from_fn(k, k, |a, b| self.cov_obs[(sites[a], sites[b])]),
            DMatrix::from_fn(k, k, |a, b| self.d1[(sites[a], sites[b])]),
            self.mean_truth,
            self.sigma_eps_sq,
            self.alpha,
            self.normalization,
            self.n_steps,
        )
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let tol = SYMMETRY_TOL * max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(SpatError::InvalidParameter(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let min = min_eigenvalue(m);
    if min < -PSD_TOL * m.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(SpatError::NonPsdMatrix { min_eigenvalue: min });
    }
    Ok(())
}

/// Estimates the moment set with unbiased covariances.
pub fn estimate_moments(
    panel: &ObservationPanel,
    truth: &TruthSeries,
    noise: &NoiseModel,
    avail: &AvailabilityModel,
) -> Result<MomentSet> {
    estimate_moments_with(panel, truth, noise, avail, CovNormalization::default())
}

pub fn estimate_moments_with(
    panel: &ObservationPanel,
    truth: &TruthSeries,
    noise: &NoiseModel,
    avail: &AvailabilityModel,
    normalization: CovNormalization,
) -> Result<MomentSet> {
    validate_panel(panel, truth)?;
    let n = panel.n_sites();
    let steps = panel.n_steps();
    let r = panel.values();
    let v = truth.values();

    let mean_obs = DVector::from_fn(n, |i, _| r.row(i).sum() / steps as f64);
    let mean_truth = v.iter().sum::<f64>() / steps as f64;

    let centered = DMatrix::from_fn(n, steps, |i, t| r[(i, t)] - mean_obs[i]);
    let mut cov_obs = &centered * centered.transpose() / normalization.divisor(steps);

    let dev = DMatrix::from_fn(n, steps, |i, t| r[(i, t)] - v[t]);
    let mut d1 = &dev * dev.transpose() / steps as f64;

    // the products above are symmetric up to rounding; make them exact
    symmetrize(&mut cov_obs);
    symmetrize(&mut d1);

    MomentSet::from_parts(
        mean_obs,
        cov_obs,
        d1,
        mean_truth,
        noise.variance(),
        avail.alpha(),
        normalization,
        steps,
    )
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Quadratic-form variance kernel `C = S_r / a + (1 - a)/a * F`, with
/// `F_ii = (E r_i - mu)^2` for the supplied reference mean `mu`.
pub fn build_variance_matrix(m: &MomentSet, avail: &AvailabilityModel, mu_upsilon: f64) -> DMatrix<f64> {
    build_variance_matrix_with(m, avail, mu_upsilon, VarianceForm::Compact)
}

pub fn build_variance_matrix_with(
    m: &MomentSet,
    avail: &AvailabilityModel,
    mu_upsilon: f64,
    form: VarianceForm,
) -> DMatrix<f64> {
    let a = avail.alpha();
    let k = avail.missing_ratio();
    let mut c = match form {
        VarianceForm::Compact => &m.cov_obs / a,
        VarianceForm::Expanded => m.cov_obs.clone(),
    };
    for i in 0..m.n_sites() {
        let dev = m.mean_obs[i] - mu_upsilon;
        c[(i, i)] += k * dev * dev;
        if form == VarianceForm::Expanded {
            c[(i, i)] += k * m.cov_obs[(i, i)];
        }
    }
    c
}

/// On-disk key/value layout of a moment set (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentSummary {
    pub format: String,
    pub n_sites: usize,
    pub n_steps: usize,
    pub alpha: f64,
    pub sigma_eps_sq: f64,
    pub mean_truth: f64,
    pub normalization: CovNormalization,
    pub location_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<[f64; 2]>>,
    pub mean_obs: Vec<f64>,
    pub d2_diag: Vec<f64>,
    pub f_diag: Vec<f64>,
    pub zeta_sq: Vec<f64>,
    pub cov_obs: Vec<Vec<f64>>,
    pub d1: Vec<Vec<f64>>,
}

pub const SUMMARY_FORMAT: &str = "spatavg-moments/1";

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(SpatError::Parse(format!("{what} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl MomentSummary {
    pub fn new(m: &MomentSet, location_ids: &[String], coords: Option<&[(f64, f64)]>) -> Self {
        Self {
            format: SUMMARY_FORMAT.into(),
            n_sites: m.n_sites(),
            n_steps: m.n_steps,
            alpha: m.alpha,
            sigma_eps_sq: m.sigma_eps_sq,
            mean_truth: m.mean_truth,
            normalization: m.normalization,
            location_ids: location_ids.to_vec(),
            coords: coords.map(|c| c.iter().map(|&(a, b)| [a, b]).collect()),
            mean_obs: m.mean_obs.iter().copied().collect(),
            d2_diag: m.d2_diag.iter().copied().collect(),
            f_diag: m.f_diag.iter().copied().collect(),
            zeta_sq: m.zeta_sq.iter().copied().collect(),
            cov_obs: rows(&m.cov_obs),
            d1: rows(&m.d1),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SpatError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| SpatError::Parse(e.to_string()))?;
        if s.format != SUMMARY_FORMAT {
            return Err(SpatError::Parse(format!("unknown moments format '{}'", s.format)));
        }
        if s.location_ids.len() != s.n_sites {
            return Err(SpatError::Parse("location_ids length disagrees with n_sites".into()));
        }
        Ok(s)
    }

    /// Rebuilds and revalidates the moment set. Derived vectors are
    /// recomputed from the primary fields.
    pub fn to_moments(&self) -> Result<MomentSet> {
        let n = self.n_sites;
        if self.mean_obs.len() != n {
            return Err(SpatError::Parse("mean_obs length disagrees with n_sites".into()));
        }
        MomentSet::from_parts(
            DVector::from_vec(self.mean_obs.clone()),
            from_rows(&self.cov_obs, n, "cov_obs")?,
            from_rows(&self.d1, n, "d1")?,
            self.mean_truth,
            self.sigma_eps_sq,
            self.alpha,
            self.normalization,
            self.n_steps,
        )
    }
}
