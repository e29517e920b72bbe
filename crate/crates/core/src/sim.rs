//! Availability ensembles and the exact enumeration oracle.
//!
//! [`simulate`] draws independent Bernoulli availabilities for every site, time
//! step and realization, evaluates the ratio estimator and summarizes the
//! ensemble. [`enumerate_exact`] computes the same statistics with no sampling
//! error by summing over all `2^n` availability patterns.
//!
//! Realization `k` always draws from ChaCha stream `k` of the configured seed,
//! and per-realization results are reduced in index order, so output is
//! bit-identical for any rayon thread count.

use rand::distr::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{check_weights_len, validate_panel, AvailabilityModel, ObservationPanel, TruthSeries, WeightVector};
use crate::delta::RSMoments;
use crate::error::{Result, SpatError};

/// Largest site count [`enumerate_exact`] accepts.
pub const MAX_ENUMERATION_SITES: usize = 20;

/// What to do when a draw leaves no weighted observation at a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyPatternPolicy {
    Error,
    /// Redraw that time step until some weighted observation is available.
    #[default]
    Resample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_realizations: usize,
    pub seed: u64,
    pub alpha_grid: Vec<f64>,
    pub empty_pattern_policy: EmptyPatternPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_realizations: 5000,
            seed: 0,
            alpha_grid: default_alpha_grid(),
            empty_pattern_policy: EmptyPatternPolicy::Resample,
        }
    }
}

/// `0.1, 0.2, ..., 1.0`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(SpatError::InvalidParameter("need at least one realization".into()));
        }
        for &a in &self.alpha_grid {
            AvailabilityModel::new(a)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Time mean of `(ensemble mean - truth)^2`.
    pub sim_bias_sq: f64,
    /// Ensemble mean of each realization's temporal variance (`N - 1` divisor).
    pub sim_variance: f64,
    pub ensemble_mean_series: Vec<f64>,
    pub mc_stderr_bias: f64,
    pub mc_stderr_var: f64,
    pub n_realizations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    /// `E[r(t) | S > 0]` for every time step.
    pub mean_series: Vec<f64>,
    /// `Var[r(t) | S > 0]` for every time step.
    pub pattern_variance: Vec<f64>,
    pub bias_sq: f64,
    /// Expected temporal variance (`N - 1` divisor) of one realization.
    pub variance: f64,
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// One realization of the estimator time series. Each site is drawn at
/// every step, weighted or not.
fn realization(
    panel: &ObservationPanel,
    beta: &[f64],
    alpha: f64,
    policy: EmptyPatternPolicy,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let coin = Bernoulli::new(alpha).map_err(|e| SpatError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = panel.n_sites();
    let values = panel.values();
    let mut series = Vec::with_capacity(panel.n_steps());
    for t in 0..panel.n_steps() {
        loop {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                if coin.sample(&mut rng) {
                    num += beta[i] * values[(i, t)];
                    den += beta[i];
                }
            }
            if den > 0.0 {
                series.push(num / den);
                break;
            }
            if policy == EmptyPatternPolicy::Error {
                return Err(SpatError::AllMissingPattern { t });
            }
        }
    }
    Ok(series)
}

/// Every realization's estimator series, in realization order.
pub fn simulate_series(
    panel: &ObservationPanel,
    beta: &WeightVector,
    avail: &AvailabilityModel,
    cfg: &SimConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    check_weights_len(beta, panel.n_sites())?;
    if beta.as_slice().iter().all(|&b| b == 0.0) {
        return Err(SpatError::EmptySupport);
    }
    let b = beta.as_slice();
    (0..cfg.n_realizations as u64)
        .into_par_iter()
        .map(|k| realization(panel, b, avail.alpha(), cfg.empty_pattern_policy, cfg.seed, k))
        .collect()
}

/// Summarizes an ensemble of estimator series against the truth.
pub fn summarize_ensemble(series: &[Vec<f64>], truth: &TruthSeries) -> Result<SimResult> {
    let k = series.len();
    if k == 0 {
        return Err(SpatError::InvalidParameter("empty ensemble".into()));
    }
    let steps = truth.len();
    if series.iter().any(|s| s.len() != steps) {
        return Err(SpatError::DimensionMismatch("series length disagrees with truth".into()));
    }
    let kf = k as f64;

    let mut sums = vec![KahanSum::default(); steps];
    let mut vars = Vec::with_capacity(k);
    for s in series {
        for (acc, &x) in sums.iter_mut().zip(s) {
            acc.add(x);
        }
        vars.push(sample_variance(s));
    }
    let ensemble_mean_series: Vec<f64> = sums.iter().map(|s| s.value() / kf).collect();

    // spread of each step across realizations
    let mut spread = vec![KahanSum::default(); steps];
    for s in series {
        for ((acc, &x), &m) in spread.iter_mut().zip(s).zip(&ensemble_mean_series) {
            acc.add((x - m) * (x - m));
        }
    }
    let step_var: Vec<f64> = spread
        .iter()
        .map(|s| if k > 1 { s.value() / (kf - 1.0) } else { 0.0 })
        .collect();

    let nf = steps as f64;
    let errs: Vec<f64> = ensemble_mean_series.iter().zip(truth.values()).map(|(m, v)| m - v).collect();
    let sim_bias_sq = errs.iter().map(|e| e * e).sum::<f64>() / nf;

    // linearized error of the squared-mean statistic plus its O(1/K) offset
    let lin: f64 = errs
        .iter()
        .zip(&step_var)
        .map(|(e, v)| (2.0 * e / nf).powi(2) * v / kf)
        .sum();
    let offset = step_var.iter().sum::<f64>() / (nf * kf);
    let mc_stderr_bias = (lin + offset * offset).sqrt();

    let mut vsum = KahanSum::default();
    vars.iter().for_each(|&v| vsum.add(v));
    let sim_variance = vsum.value() / kf;
    let mc_stderr_var = if k > 1 {
        let mut dev = KahanSum::default();
        vars.iter().for_each(|&v| dev.add((v - sim_variance).powi(2)));
        (dev.value() / (kf - 1.0) / kf).sqrt()
    } else {
        0.0
    };

    Ok(SimResult {
        sim_bias_sq,
        sim_variance,
        ensemble_mean_series,
        mc_stderr_bias,
        mc_stderr_var,
        n_realizations: k,
    })
}

/// Monte Carlo bias and variance of the estimator.
pub fn simulate(
    panel: &ObservationPanel,
    truth: &TruthSeries,
    beta: &WeightVector,
    avail: &AvailabilityModel,
    cfg: &SimConfig,
) -> Result<SimResult> {
    validate_panel(panel, truth)?;
    let series = simulate_series(panel, beta, avail, cfg)?;
    summarize_ensemble(&series, truth)
}

fn pattern_probabilities(n: usize, alpha: f64) -> Vec<f64> {
    (0..1usize << n)
        .map(|mask| {
            let k = mask.count_ones() as i32;
            alpha.powi(k) * (1.0 - alpha).powi(n as i32 - k)
        })
        .collect()
}

/// Exact conditional statistics of the estimator over all availability
/// patterns. Patterns with no weighted observation are excluded and the
/// remaining probabilities renormalized.
pub fn enumerate_exact(
    panel: &ObservationPanel,
    truth: &TruthSeries,
    beta: &WeightVector,
    avail: &AvailabilityModel,
) -> Result<ExactResult> {
    validate_panel(panel, truth)?;
    let n = panel.n_sites();
    if n > MAX_ENUMERATION_SITES {
        return Err(SpatError::TooManySites {
            n,
            max: MAX_ENUMERATION_SITES,
        });
    }
    check_weights_len(beta, n)?;
    let b = beta.as_slice();
    let probs = pattern_probabilities(n, avail.alpha());

    // weight sums per pattern are shared by all time steps
    let dens: Vec<f64> = (0..probs.len())
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| b[i]).sum())
        .collect();
    let support: f64 = probs.iter().zip(&dens).filter(|(_, d)| **d > 0.0).map(|(p, _)| p).sum();
    if support <= 0.0 {
        return Err(SpatError::EmptySupport);
    }

    let values = panel.values();
    let steps = panel.n_steps();
    let mut mean_series = Vec::with_capacity(steps);
    let mut pattern_variance = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut e1 = KahanSum::default();
        let mut e2 = KahanSum::default();
        for (mask, (&p, &den)) in probs.iter().zip(&dens).enumerate() {
            if den <= 0.0 || p == 0.0 {
                continue;
            }
            let num: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| b[i] * values[(i, t)]).sum();
            let f = num / den;
            e1.add(p * f);
            e2.add(p * f * f);
        }
        let m = e1.value() / support;
        mean_series.push(m);
        pattern_variance.push((e2.value() / support - m * m).max(0.0));
    }

    let nf = steps as f64;
    let bias_sq = mean_series
        .iter()
        .zip(truth.values())
        .map(|(m, v)| (m - v).powi(2))
        .sum::<f64>()
        / nf;
    // E[sample variance] of independent steps = mean step variance + sample
    // variance of the step means
    let variance = pattern_variance.iter().sum::<f64>() / nf + sample_variance(&mean_series);
    Ok(ExactResult {
        mean_series,
        pattern_variance,
        bias_sq,
        variance,
    })
}

/// Exact moments of `R` and `S` under the joint law of a uniformly drawn
/// time step and an independent availability pattern, with no conditioning
/// on `S > 0`.
pub fn enumerate_rs_moments(
    panel: &ObservationPanel,
    beta: &WeightVector,
    avail: &AvailabilityModel,
) -> Result<RSMoments> {
    let n = panel.n_sites();
    if n > MAX_ENUMERATION_SITES {
        return Err(SpatError::TooManySites {
            n,
            max: MAX_ENUMERATION_SITES,
        });
    }
    check_weights_len(beta, n)?;
    let b = beta.as_slice();
    let probs = pattern_probabilities(n, avail.alpha());
    let values = panel.values();
    let steps = panel.n_steps();
    let pt = 1.0 / steps as f64;

    let (mut er, mut es, mut err, mut ess, mut ers) = (
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
    );
    for t in 0..steps {
        for (mask, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (mut r, mut s) = (0.0, 0.0);
            for i in (0..n).filter(|i| mask >> i & 1 == 1) {
                r += b[i] * values[(i, t)];
                s += b[i];
            }
            let w = p * pt;
            er.add(w * r);
            es.add(w * s);
            err.add(w * r * r);
            ess.add(w * s * s);
            ers.add(w * r * s);
        }
    }
    let (mr, ms) = (er.value(), es.value());
    Ok(RSMoments {
        mu_r: mr,
        mu_s: ms,
        var_r: err.value() - mr * mr,
        var_s: ess.value() - ms * ms,
        cov_rs: ers.value() - mr * ms,
    })
}
