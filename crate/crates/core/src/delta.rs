//! Delta-method bias and variance of the ratio estimator `r = R / S`.
//!
//! `R = sum_i b_i s_i r_i` and `S = sum_i b_i s_i` with independent
//! Bernoulli availabilities `s_i`. The variance uses the first-order Taylor
//! expansion of `R / S` about the means; the bias keeps the second-order
//! terms of the expectation.

use crate::data::{check_weights_len, AvailabilityModel, WeightVector};
use crate::error::{Result, SpatError};
use crate::moments::MomentSet;

/// Warn when the validity diagnostic exceeds this value.
pub const VALIDITY_THRESHOLD: f64 = 0.05;

/// Means, variances and covariance of the numerator `R` and denominator `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RSMoments {
    pub mu_r: f64,
    pub mu_s: f64,
    pub var_r: f64,
    pub var_s: f64,
    pub cov_rs: f64,
}

impl RSMoments {
    /// Variance of `R / S` by first-order expansion about `(mu_r, mu_s)`.
    pub fn ratio_variance(&self) -> f64 {
        let (mr, ms) = (self.mu_r, self.mu_s);
        self.var_r / (ms * ms) + mr * mr / ms.powi(4) * self.var_s - 2.0 * mr / ms.powi(3) * self.cov_rs
    }

    /// `|cov_rs| <= sqrt(var_r var_s)` up to `tol`.
    pub fn satisfies_cauchy_schwarz(&self, tol: f64) -> bool {
        self.cov_rs.abs() <= (self.var_r.max(0.0) * self.var_s.max(0.0)).sqrt() + tol
    }
}

/// Squared bias split into its finite-sampling and missing-data parts.
///
/// `bias_sq = term_sampling + 2 * shift * (b . d2) + term_missing`, where
/// `shift` is the missing-data offset of the estimator's expectation and
/// `term_missing = shift^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasTerms {
    pub bias_sq: f64,
    pub term_sampling: f64,
    pub term_missing: f64,
    /// Signed offset `(1-a)/a * (mu * sum b_i^2 - sum b_i^2 E v_i)`.
    pub shift: f64,
}

/// Bias, variance, MSE and standard error of one averaging scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatReport {
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
    pub se: f64,
    /// `None` when the mean of `R` vanishes.
    pub validity_ratio: Option<f64>,
    pub bias_term_sampling: f64,
    pub bias_term_missing: f64,
}

impl StatReport {
    pub fn validity_warning(&self) -> bool {
        self.validity_ratio.is_none_or(|v| v > VALIDITY_THRESHOLD)
    }
}

fn quad(m: &nalgebra::DMatrix<f64>, beta: &WeightVector) -> f64 {
    let b = beta.as_vector();
    b.dot(&(m * b))
}

/// `mu = sum_i b_i E v_i`.
pub fn weighted_mean(m: &MomentSet, beta: &WeightVector) -> f64 {
    beta.as_vector().dot(&m.mean_obs)
}

/// Moments of `R` and `S` under independent availability.
pub fn rs_moments(m: &MomentSet, beta: &WeightVector, avail: &AvailabilityModel) -> Result<RSMoments> {
    check_weights_len(beta, m.n_sites())?;
    let a = avail.alpha();
    let b = beta.as_slice();
    let zeta = m.zeta_sq_at(a);
    let n = m.n_sites();

    let mut diag = 0.0;
    let mut off = 0.0;
    let mut b2_mean = 0.0;
    for i in 0..n {
        diag += b[i] * b[i] * zeta[i];
        b2_mean += b[i] * b[i] * m.mean_obs[i];
        for j in (i + 1)..n {
            off += b[i] * b[j] * m.cov_obs[(i, j)];
        }
    }
    let b2 = beta.sum_sq();
    Ok(RSMoments {
        mu_r: a * weighted_mean(m, beta),
        mu_s: a,
        var_r: a * diag + 2.0 * a * a * off + a * m.sigma_eps_sq * b2,
        var_s: a * (1.0 - a) * b2,
        cov_rs: a * (1.0 - a) * b2_mean,
    })
}

/// Squared bias of the estimator relative to the truth series.
///
/// The per-step expectation error is `b.r(t) - v(t) + shift`; its time mean
/// square expands into moment-set quantities only, since `D_1` already holds
/// the time average of `(b.d(t))^2` and `b.d2` that of `b.d(t)`.
pub fn delta_bias(m: &MomentSet, beta: &WeightVector, avail: &AvailabilityModel) -> Result<BiasTerms> {
    check_weights_len(beta, m.n_sites())?;
    let b = beta.as_slice();
    let mu = weighted_mean(m, beta);
    let b2 = beta.sum_sq();
    let b2_mean: f64 = b.iter().zip(m.mean_obs.iter()).map(|(bi, e)| bi * bi * e).sum();
    let shift = avail.missing_ratio() * (mu * b2 - b2_mean);

    let term_sampling = quad(&m.d1, beta);
    let mean_err = beta.as_vector().dot(&m.d2_diag);
    let term_missing = shift * shift;
    let bias_sq = (term_sampling + 2.0 * shift * mean_err + term_missing).max(0.0);
    Ok(BiasTerms {
        bias_sq,
        term_sampling,
        term_missing,
        shift,
    })
}

/// The five terms of the delta variance, in order: inflated second moments,
/// spatial covariance, noise, `R`-`S` covariance, variance of `S`.
fn variance_terms(m: &MomentSet, beta: &WeightVector, avail: &AvailabilityModel) -> [f64; 5] {
    let a = avail.alpha();
    let k = avail.missing_ratio();
    let b = beta.as_slice();
    let zeta = m.zeta_sq_at(a);
    let n = m.n_sites();
    let mu = weighted_mean(m, beta);
    let b2 = beta.sum_sq();

    let mut diag = 0.0;
    let mut off = 0.0;
    let mut b2_mean = 0.0;
    for i in 0..n {
        diag += b[i] * b[i] * zeta[i];
        b2_mean += b[i] * b[i] * m.mean_obs[i];
        for j in (i + 1)..n {
            off += b[i] * b[j] * m.cov_obs[(i, j)];
        }
    }
    [
        diag / a,
        2.0 * off,
        m.sigma_eps_sq * b2 / a,
        -2.0 * k * mu * b2_mean,
        k * mu * mu * b2,
    ]
}

/// Delta variance evaluated two ways: term by term, and assembled from the
/// moments of `R` and `S`.
pub fn variance_routes(m: &MomentSet, beta: &WeightVector, avail: &AvailabilityModel) -> Result<(f64, f64)> {
    let rs = rs_moments(m, beta, avail)?;
    let direct: f64 = variance_terms(m, beta, avail).iter().sum();
    Ok((direct, rs.ratio_variance()))
}

/// Variance of the estimator.
pub fn delta_variance(m: &MomentSet, beta: &WeightVector, avail: &AvailabilityModel) -> Result<f64> {
    check_weights_len(beta, m.n_sites())?;
    let terms = variance_terms(m, beta, avail);
    let v: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|t| t.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    debug_assert!({
        let alt = rs_moments(m, beta, avail)?.ratio_variance();
        (alt - v).abs() <= 1e-9 * scale
    });
    if v < -1e-9 * scale {
        return Err(SpatError::NegativeVariance { value: v });
    }
    Ok(v.max(0.0))
}

/// Combines bias and variance into a report. `validity_ratio` is left empty;
/// [`stat_report`] fills it.
pub fn mse_and_se(bias: &BiasTerms, variance: f64, m: &MomentSet, beta: &WeightVector) -> Result<StatReport> {
    check_weights_len(beta, m.n_sites())?;
    if bias.bias_sq < 0.0 || variance < 0.0 {
        return Err(SpatError::InvalidParameter("bias and variance must be nonnegative".into()));
    }
    Ok(StatReport {
        bias_sq: bias.bias_sq,
        variance,
        mse: bias.bias_sq + variance,
        se: standard_error(m, beta),
        validity_ratio: None,
        bias_term_sampling: bias.term_sampling,
        bias_term_missing: bias.term_missing,
    })
}

/// `sqrt(b^T (D_1 + sigma_eps^2 I) b)`.
pub fn standard_error(m: &MomentSet, beta: &WeightVector) -> f64 {
    (quad(&m.d1, beta) + m.sigma_eps_sq * beta.sum_sq()).max(0.0).sqrt()
}

/// Size of the second-order correction to `E[R/S]` relative to `E R / E S`:
/// `|var_S / mu_S^2 - cov_RS / (mu_R mu_S)|`.
pub fn validity_diagnostic(rs: &RSMoments) -> Result<f64> {
    if rs.mu_r == 0.0 {
        return Err(SpatError::UndefinedDiagnostic);
    }
    Ok((rs.var_s / (rs.mu_s * rs.mu_s) - rs.cov_rs / (rs.mu_r * rs.mu_s)).abs())
}

/// Full report for one weight vector at one availability.
pub fn stat_report(m: &MomentSet, beta: &WeightVector, avail: &AvailabilityModel) -> Result<StatReport> {
    let bias = delta_bias(m, beta, avail)?;
    let variance = delta_variance(m, beta, avail)?;
    let mut report = mse_and_se(&bias, variance, m, beta)?;
    report.validity_ratio = validity_diagnostic(&rs_moments(m, beta, avail)?).ok();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{NoiseModel, ObservationPanel, TruthSeries};
    use crate::moments::{estimate_moments, CovNormalization};
    use nalgebra::{DMatrix, DVector};

    fn fixture() -> (ObservationPanel, TruthSeries) {
        let rows = vec![
            vec![4.0, 6.5, 5.0, 7.5, 3.0, 6.0],
            vec![9.0, 8.0, 11.5, 10.0, 7.0, 9.5],
            vec![1.5, 3.0, 2.0, 2.5, 1.0, 2.0],
        ];
        let truth = vec![5.0, 6.0, 6.0, 6.5, 4.0, 6.0];
        (ObservationPanel::from_rows(&rows).unwrap(), TruthSeries::new(truth).unwrap())
    }

    #[test]
    fn rs_at_full_availability() {
        let (p, t) = fixture();
        let a = AvailabilityModel::certain();
        let m = estimate_moments(&p, &t, &NoiseModel::noiseless(), &a).unwrap();
        let rs = rs_moments(&m, &WeightVector::new(vec![0.2, 0.5, 0.3]).unwrap(), &a).unwrap();
        assert_eq!(rs.var_s, 0.0);
        assert_eq!(rs.cov_rs, 0.0);
        assert_eq!(rs.mu_s, 1.0);
    }

    #[test]
    fn rs_single_site_half_availability() {
        let m = MomentSet::from_parts(
            DVector::from_vec(vec![10.0, 3.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            5.0,
            0.0,
            0.5,
            CovNormalization::Unbiased,
            10,
        )
        .unwrap();
        let rs = rs_moments(&m, &WeightVector::unit(2, 0), &AvailabilityModel::new(0.5).unwrap()).unwrap();
        assert!((rs.cov_rs - 2.5).abs() < 1e-15);
        assert!((rs.var_s - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bias_zero_for_perfect_sampling() {
        let rows = vec![vec![1.0, 2.0, 4.0], vec![1.0, 2.0, 4.0]];
        let p = ObservationPanel::from_rows(&rows).unwrap();
        let t = TruthSeries::new(vec![1.0, 2.0, 4.0]).unwrap();
        let a = AvailabilityModel::certain();
        let m = estimate_moments(&p, &t, &NoiseModel::noiseless(), &a).unwrap();
        let b = delta_bias(&m, &WeightVector::uniform(2), &a).unwrap();
        assert_eq!(b.bias_sq, 0.0);
    }

    #[test]
    fn bias_matches_per_step_expansion() {
        // hand substitution: square the per-step expectation error and average
        let (p, t) = fixture();
        let alpha = 0.8;
        let a = AvailabilityModel::new(alpha).unwrap();
        let m = estimate_moments(&p, &t, &NoiseModel::noiseless(), &a).unwrap();
        let beta = [0.2, 0.5, 0.3];
        let w = WeightVector::new(beta.to_vec()).unwrap();

        let ev: Vec<f64> = (0..3).map(|i| (0..6).map(|s| p.value(i, s)).sum::<f64>() / 6.0).collect();
        let mu: f64 = (0..3).map(|i| beta[i] * ev[i]).sum();
        let b2: f64 = beta.iter().map(|b| b * b).sum();
        let b2e: f64 = (0..3).map(|i| beta[i] * beta[i] * ev[i]).sum();
        let corr = (1.0 - alpha) / alpha * (mu * b2 - b2e);
        let want: f64 = (0..6)
            .map(|s| {
                let e: f64 = (0..3).map(|i| beta[i] * p.value(i, s)).sum::<f64>() - t.values()[s] + corr;
                e * e
            })
            .sum::<f64>()
            / 6.0;
        let got = delta_bias(&m, &w, &a).unwrap();
        assert!((got.bias_sq - want).abs() <= 1e-12 * want);
        assert!((got.term_missing - corr * corr).abs() <= 1e-15);
    }

    #[test]
    fn single_site_variance_both_routes() {
        // n = 1, b = 1, a = 0.5, E v = mu, var v = v: direct substitution gives 2v
        let (mu, v) = (3.0, 0.7);
        let m = MomentSet::from_parts(
            DVector::from_vec(vec![mu]),
            DMatrix::from_element(1, 1, v),
            DMatrix::zeros(1, 1),
            mu,
            0.0,
            0.5,
            CovNormalization::Unbiased,
            10,
        )
        .unwrap();
        let a = AvailabilityModel::new(0.5).unwrap();
        let w = WeightVector::unit(1, 0);
        let zeta = v + mu * mu - 0.5 * mu * mu;
        let by_hand = 2.0 * zeta - 2.0 * mu * mu + mu * mu;
        assert!((by_hand - 2.0 * v).abs() < 1e-14);
        let (direct, assembled) = variance_routes(&m, &w, &a).unwrap();
        assert!((direct - by_hand).abs() < 1e-14);
        assert!((assembled - by_hand).abs() < 1e-14);
        assert!((delta_variance(&m, &w, &a).unwrap() - 2.0 * v).abs() < 1e-14);
    }

    #[test]
    fn full_availability_reductions() {
        let (p, t) = fixture();
        let a = AvailabilityModel::certain();
        let m = estimate_moments(&p, &t, &NoiseModel::new(0.2).unwrap(), &a).unwrap();
        let w = WeightVector::new(vec![0.25, 0.35, 0.4]).unwrap();
        let b = w.as_vector();
        let v = delta_variance(&m, &w, &a).unwrap();
        let quad_s = b.dot(&(&m.cov_obs * b));
        assert!((v - quad_s).abs() <= 1e-12 * quad_s);
        let bias = delta_bias(&m, &w, &a).unwrap();
        let quad_d = b.dot(&(&m.d1 * b));
        assert!((bias.bias_sq - quad_d).abs() <= 1e-12 * quad_d);
    }

    #[test]
    fn mse_is_exact_sum() {
        let (p, t) = fixture();
        let a = AvailabilityModel::new(0.7).unwrap();
        let m = estimate_moments(&p, &t, &NoiseModel::new(0.1).unwrap(), &a).unwrap();
        let r = stat_report(&m, &WeightVector::uniform(3), &a).unwrap();
        assert_eq!(r.mse, r.bias_sq + r.variance);
        assert!(r.se >= 0.0);
    }

    #[test]
    fn se_reduces_to_root_bias() {
        let (p, t) = fixture();
        let a = AvailabilityModel::certain();
        let m = estimate_moments(&p, &t, &NoiseModel::noiseless(), &a).unwrap();
        let w = WeightVector::new(vec![0.1, 0.3, 0.6]).unwrap();
        let r = stat_report(&m, &w, &a).unwrap();
        assert!((r.se - r.bias_sq.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn se_uniform_weights() {
        let (p, t) = fixture();
        let a = AvailabilityModel::certain();
        let s = 0.4;
        let m = estimate_moments(&p, &t, &NoiseModel::new(s).unwrap(), &a).unwrap();
        let n = 3.0;
        let total: f64 = m.d1.iter().sum::<f64>() + s * s * n;
        let want = total.sqrt() / n;
        assert!((standard_error(&m, &WeightVector::uniform(3)) - want).abs() < 1e-13);
    }

    #[test]
    fn validity_examples() {
        let (p, t) = fixture();
        let m = estimate_moments(&p, &t, &NoiseModel::noiseless(), &AvailabilityModel::certain()).unwrap();
        let rs = rs_moments(&m, &WeightVector::uniform(3), &AvailabilityModel::certain()).unwrap();
        assert_eq!(validity_diagnostic(&rs).unwrap(), 0.0);

        // all weight on one site whose mean equals mu: (1-a)/a * (1 - 1) = 0
        let half = AvailabilityModel::new(0.5).unwrap();
        let rs = rs_moments(&m, &WeightVector::unit(3, 1), &half).unwrap();
        assert!(validity_diagnostic(&rs).unwrap().abs() < 1e-15);

        let zero = RSMoments {
            mu_r: 0.0,
            mu_s: 0.5,
            var_r: 1.0,
            var_s: 0.25,
            cov_rs: 0.0,
        };
        assert_eq!(validity_diagnostic(&zero), Err(SpatError::UndefinedDiagnostic));
    }

    #[test]
    fn validity_small_for_many_sites() {
        let n = 200;
        let m = MomentSet::from_parts(
            DVector::from_fn(n, |i, _| 5.0 + (i % 7) as f64),
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
            8.0,
            0.0,
            0.5,
            CovNormalization::Unbiased,
            30,
        )
        .unwrap();
        let rs = rs_moments(&m, &WeightVector::uniform(n), &AvailabilityModel::new(0.5).unwrap()).unwrap();
        assert!(validity_diagnostic(&rs).unwrap() < 1e-3);
    }

    #[test]
    fn indefinite_covariance_gives_negative_variance_error() {
        let mut m = MomentSet::from_parts(
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            1.0,
            0.0,
            1.0,
            CovNormalization::Unbiased,
            10,
        )
        .unwrap();
        // bypass validation, as a hand-edited moment set might
        m.cov_obs = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0]);
        let err = delta_variance(&m, &WeightVector::uniform(2), &AvailabilityModel::certain()).unwrap_err();
        assert_eq!(err.category(), "negative-variance");
    }
}
