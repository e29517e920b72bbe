//! Panel data, availability and weight types.
//!
//! Missing observations are never stored. A panel always holds a complete
//! `n x N` matrix of observed values; which of them would be reported is a
//! property of the query (the availability probability) or of a simulation
//! draw.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpatError};

/// Sum-to-one tolerance accepted as-is.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Larger deviations up to this bound are renormalized on construction.
pub const WEIGHT_RENORM_TOL: f64 = 1e-9;

/// Observed values `r_i(t)` at `n` locations over `N` time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    values: DMatrix<f64>,
    location_ids: Vec<String>,
    coords: Option<Vec<(f64, f64)>>,
    time_ids: Vec<String>,
}

impl ObservationPanel {
    /// Builds a panel from an `n x N` matrix (rows are locations).
    pub fn new(
        values: DMatrix<f64>,
        location_ids: Vec<String>,
        coords: Option<Vec<(f64, f64)>>,
        time_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, steps) = values.shape();
        if n == 0 {
            return Err(SpatError::DegeneratePanel("panel has no locations".into()));
        }
        if steps < 2 {
            return Err(SpatError::DegeneratePanel(format!(
                "panel needs at least 2 time steps, got {steps}"
            )));
        }
        if location_ids.len() != n {
            return Err(SpatError::DimensionMismatch(format!(
                "{} location ids for {n} rows",
                location_ids.len()
            )));
        }
        if time_ids.len() != steps {
            return Err(SpatError::DimensionMismatch(format!(
                "{} time ids for {steps} columns",
                time_ids.len()
            )));
        }
        if let Some(c) = &coords {
            if c.len() != n {
                return Err(SpatError::DimensionMismatch(format!(
                    "{} coordinate pairs for {n} rows",
                    c.len()
                )));
            }
            if c.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
                return Err(SpatError::NonFinite("coordinates".into()));
            }
        }
        if let Some((k, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            // column-major storage
            return Err(SpatError::NonFinite(format!(
                "panel value at location {} time {}",
                k % n,
                k / n
            )));
        }
        Ok(Self {
            values,
            location_ids,
            coords,
            time_ids,
        })
    }

    /// Panel with generated ids `s1..sn` and `t1..tN`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let steps = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != steps) {
            return Err(SpatError::DimensionMismatch("ragged panel rows".into()));
        }
        let values = DMatrix::from_fn(n, steps, |i, t| rows[i][t]);
        Self::new(
            values,
            (1..=n).map(|i| format!("s{i}")).collect(),
            None,
            (1..=steps).map(|t| format!("t{t}")).collect(),
        )
    }

    pub fn n_sites(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_steps(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn value(&self, site: usize, t: usize) -> f64 {
        self.values[(site, t)]
    }

    /// Observations across all sites at time step `t`.
    pub fn column(&self, t: usize) -> Vec<f64> {
        self.values.column(t).iter().copied().collect()
    }

    pub fn location_ids(&self) -> &[String] {
        &self.location_ids
    }

    pub fn coords(&self) -> Option<&[(f64, f64)]> {
        self.coords.as_deref()
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    /// Contiguous block of time steps `[start, end)`.
    pub fn time_block(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_steps() {
            return Err(SpatError::InvalidParameter(format!(
                "time block {start}..{end} outside 0..{}",
                self.n_steps()
            )));
        }
        Self::new(
            self.values.columns(start, end - start).into_owned(),
            self.location_ids.clone(),
            self.coords.clone(),
            self.time_ids[start..end].to_vec(),
        )
    }
}

/// Reference spatial average `v(t)`, treated as ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSeries {
    values: Vec<f64>,
}

impl TruthSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpatError::NonFinite(format!("truth value at time {t}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(SpatError::InvalidParameter(format!(
                "time block {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        Self::new(self.values[start..end].to_vec())
    }
}

/// Probability that any single observation is reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvailabilityModel {
    alpha: f64,
}

impl AvailabilityModel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SpatError::InvalidParameter(format!(
                "availability must lie in (0, 1], got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Every observation is always reported.
    pub fn certain() -> Self {
        Self { alpha: 1.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `(1 - alpha) / alpha`, the factor in front of every missing-data term.
    pub fn missing_ratio(&self) -> f64 {
        (1.0 - self.alpha) / self.alpha
    }
}

/// Additive measurement noise with standard deviation `sigma_eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma_eps: f64,
}

impl NoiseModel {
    pub fn new(sigma_eps: f64) -> Result<Self> {
        if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
            return Err(SpatError::InvalidParameter(format!(
                "noise standard deviation must be finite and >= 0, got {sigma_eps}"
            )));
        }
        Ok(Self { sigma_eps })
    }

    pub fn noiseless() -> Self {
        Self { sigma_eps: 0.0 }
    }

    pub fn sigma_eps(&self) -> f64 {
        self.sigma_eps
    }

    pub fn variance(&self) -> f64 {
        self.sigma_eps * self.sigma_eps
    }
}

/// Nonnegative averaging weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    beta: DVector<f64>,
}

impl WeightVector {
    /// Validates weights: nonnegative, finite, and summing to one within
    /// [`WEIGHT_SUM_TOL`]. Sums off by at most [`WEIGHT_RENORM_TOL`] are
    /// rescaled; anything further is rejected.
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(SpatError::InvalidWeights("empty weight vector".into()));
        }
        if let Some(i) = beta.iter().position(|b| !b.is_finite()) {
            return Err(SpatError::NonFinite(format!("weight {i}")));
        }
        if let Some(i) = beta.iter().position(|&b| b < 0.0) {
            return Err(SpatError::InvalidWeights(format!(
                "weight {i} is negative ({})",
                beta[i]
            )));
        }
        let sum: f64 = beta.iter().sum();
        let dev = (sum - 1.0).abs();
        let mut beta = DVector::from_vec(beta);
        if dev > WEIGHT_RENORM_TOL {
            return Err(SpatError::InvalidWeights(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        if dev > WEIGHT_SUM_TOL {
            beta /= sum;
        }
        Ok(Self { beta })
    }

    /// Rescales any nonnegative vector with positive sum onto the simplex.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(SpatError::InvalidWeights(
                "raw weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(SpatError::InvalidWeights("raw weights sum to zero".into()));
        }
        Self::new(raw.into_iter().map(|b| b / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            beta: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    /// All weight on site `k`.
    pub fn unit(n: usize, k: usize) -> Self {
        let mut beta = DVector::zeros(n);
        beta[k] = 1.0;
        Self { beta }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn as_slice(&self) -> &[f64] {
        self.beta.as_slice()
    }

    pub fn sum_sq(&self) -> f64 {
        self.beta.norm_squared()
    }

    /// Number of weights above `threshold`.
    pub fn support_count(&self, threshold: f64) -> usize {
        self.beta.iter().filter(|&&b| b > threshold).count()
    }
}

/// Checks a panel against its truth series.
pub fn validate_panel(panel: &ObservationPanel, truth: &TruthSeries) -> Result<()> {
    if panel.n_steps() < 2 {
        return Err(SpatError::DegeneratePanel("fewer than 2 time steps".into()));
    }
    if truth.len() != panel.n_steps() {
        return Err(SpatError::DimensionMismatch(format!(
            "truth has {} steps, panel has {}",
            truth.len(),
            panel.n_steps()
        )));
    }
    if panel.values().iter().any(|v| !v.is_finite()) {
        return Err(SpatError::NonFinite("panel".into()));
    }
    if truth.values().iter().any(|v| !v.is_finite()) {
        return Err(SpatError::NonFinite("truth".into()));
    }
    Ok(())
}

pub(crate) fn check_weights_len(beta: &WeightVector, n: usize) -> Result<()> {
    if beta.len() != n {
        return Err(SpatError::DimensionMismatch(format!(
            "{} weights for {n} sites",
            beta.len()
        )));
    }
    Ok(())
}

/// The estimator `r = (sum_i b_i s_i r_i) / (sum_i b_i s_i)` for one time
/// step, given which observations are available.
pub fn evaluate_average(column: &[f64], beta: &WeightVector, available: &[bool]) -> Result<f64> {
    check_weights_len(beta, column.len())?;
    if available.len() != column.len() {
        return Err(SpatError::DimensionMismatch(format!(
            "{} availability flags for {} sites",
            available.len(),
            column.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&r, &b), &s) in column.iter().zip(beta.as_slice()).zip(available) {
        if s {
            num += b * r;
            den += b;
        }
    }
    if den <= 0.0 {
        return Err(SpatError::EmptySupport);
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel_3x10() -> ObservationPanel {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..10).map(|t| (i * 10 + t) as f64).collect())
            .collect();
        ObservationPanel::from_rows(&rows).unwrap()
    }

    #[test]
    fn validate_well_formed() {
        let truth = TruthSeries::new(vec![1.0; 10]).unwrap();
        assert!(validate_panel(&panel_3x10(), &truth).is_ok());
    }

    #[test]
    fn validate_length_mismatch() {
        let truth = TruthSeries::new(vec![1.0; 9]).unwrap();
        let err = validate_panel(&panel_3x10(), &truth).unwrap_err();
        assert_eq!(err.category(), "dimension-mismatch");
    }

    #[test]
    fn nan_rejected() {
        let mut rows = vec![vec![1.0; 10]; 3];
        rows[1][4] = f64::NAN;
        let err = ObservationPanel::from_rows(&rows).unwrap_err();
        assert_eq!(err.category(), "non-finite-value");
        assert!(TruthSeries::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn single_step_is_degenerate() {
        let err = ObservationPanel::from_rows(&[vec![1.0], vec![2.0]]).unwrap_err();
        assert_eq!(err.category(), "degenerate-panel");
    }

    #[test]
    fn average_examples() {
        let w = WeightVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(evaluate_average(&[2.0, 4.0], &w, &[true, true]).unwrap(), 3.0);
        assert_eq!(evaluate_average(&[2.0, 4.0], &w, &[true, false]).unwrap(), 2.0);
        let w = WeightVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let r = evaluate_average(&[1.0, 2.0, 3.0], &w, &[false, true, true]).unwrap();
        assert!((r - 2.625).abs() < 1e-15);
    }

    #[test]
    fn average_empty_support() {
        let w = WeightVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(
            evaluate_average(&[2.0, 4.0], &w, &[false, true]),
            Err(SpatError::EmptySupport)
        );
        assert_eq!(
            evaluate_average(&[2.0, 4.0], &w, &[false, false]),
            Err(SpatError::EmptySupport)
        );
    }

    #[test]
    fn weight_tolerances() {
        assert!(WeightVector::new(vec![0.5, 0.5 + 1e-13]).is_ok());
        let w = WeightVector::new(vec![0.5, 0.5 + 1e-10]).unwrap();
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![1.1, -0.1]).is_err());
        assert!(AvailabilityModel::new(0.0).is_err());
        assert!(AvailabilityModel::new(1.0).is_ok());
        assert!(NoiseModel::new(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn average_invariants(
            vals in prop::collection::vec(-50.0f64..50.0, 1..12),
            raw in prop::collection::vec(0.01f64..1.0, 12),
            mask in prop::collection::vec(any::<bool>(), 12),
            scale in 0.01f64..100.0,
        ) {
            let n = vals.len();
            let mut mask = mask[..n].to_vec();
            mask[0] = true;
            let w = WeightVector::normalized(raw[..n].to_vec()).unwrap();
            let r = evaluate_average(&vals, &w, &mask).unwrap();

            let support: Vec<f64> = vals.iter().zip(&mask).filter(|(_, s)| **s).map(|(v, _)| *v).collect();
            let lo = support.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = support.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r >= lo - 1e-9 && r <= hi + 1e-9);

            // ratio form cancels a common scale on the weights
            let num: f64 = vals.iter().zip(w.as_slice()).zip(&mask).filter(|(_, s)| **s).map(|((v, b), _)| v * b * scale).sum();
            let den: f64 = w.as_slice().iter().zip(&mask).filter(|(_, s)| **s).map(|(b, _)| b * scale).sum();
            prop_assert!((num / den - r).abs() <= 1e-9 * (1.0 + r.abs()));

            let all = vec![true; n];
            let mean = vals.iter().sum::<f64>() / n as f64;
            let u = WeightVector::uniform(n);
            prop_assert!((evaluate_average(&vals, &u, &all).unwrap() - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
        }
    }
}
