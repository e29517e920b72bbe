//! Synthetic rainfall-like panels: a Gaussian field with exponential spatial
//! correlation, sampled at a few sites of a dense grid whose full average
//! serves as the truth.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{NoiseModel, ObservationPanel, TruthSeries};
use crate::error::{Result, SpatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Square grid over the unit square.
    Grid2d,
    /// Evenly spaced cells on the unit interval.
    Line1d,
}

impl std::str::FromStr for Layout {
    type Err = SpatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid2d" | "2d" => Ok(Self::Grid2d),
            "line1d" | "1d" => Ok(Self::Line1d),
            other => Err(SpatError::Parse(format!("unknown layout '{other}'"))),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Grid2d => "grid2d",
            Self::Line1d => "line1d",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sites: usize,
    pub n_steps: usize,
    /// Correlation length as a fraction of the domain width; 0 gives
    /// independent cells.
    pub corr_length: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    pub layout: Layout,
    /// Domain-mean level of the field.
    pub mean_level: f64,
    /// Relative change of the local mean across the domain.
    pub mean_gradient: f64,
    /// Local standard deviation as a fraction of the local mean.
    pub cv: f64,
}

impl SynthConfig {
    pub fn new(n_sites: usize, n_steps: usize, corr_length: f64, noise: NoiseModel, seed: u64) -> Self {
        Self {
            n_sites,
            n_steps,
            corr_length,
            noise,
            seed,
            layout: Layout::Grid2d,
            mean_level: 7.0,
            mean_gradient: 1.0,
            cv: 0.3,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_sites == 0 || self.n_steps == 0 {
            return Err(SpatError::InvalidParameter("sites and steps must be at least 1".into()));
        }
        if !(self.corr_length >= 0.0) || !self.corr_length.is_finite() {
            return Err(SpatError::InvalidParameter(format!(
                "correlation length must be finite and nonnegative, got {}",
                self.corr_length
            )));
        }
        for (name, v) in [("mean level", self.mean_level), ("mean gradient", self.mean_gradient)] {
            if !v.is_finite() {
                return Err(SpatError::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if !(self.cv >= 0.0) || !self.cv.is_finite() {
            return Err(SpatError::InvalidParameter("cv must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// A generated panel with the field values before noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub panel: ObservationPanel,
    pub truth: TruthSeries,
    /// Noise-free field at the sampled sites, `n x N`.
    pub field: DMatrix<f64>,
    /// Dense-grid cell index of each site.
    pub cells: Vec<usize>,
}

pub fn generate_synthetic(
    n: usize,
    n_steps: usize,
    corr_length: f64,
    noise: NoiseModel,
    seed: u64,
) -> Result<(ObservationPanel, TruthSeries)> {
    let out = generate(&SynthConfig::new(n, n_steps, corr_length, noise, seed))?;
    Ok((out.panel, out.truth))
}

fn dense_cells(layout: Layout, n: usize) -> Vec<(f64, f64)> {
    match layout {
        Layout::Grid2d => {
            let g = 8usize.max((4.0 * n as f64).sqrt().ceil() as usize);
            (0..g * g)
                .map(|c| (((c % g) as f64 + 0.5) / g as f64, ((c / g) as f64 + 0.5) / g as f64))
                .collect()
        }
        Layout::Line1d => {
            let g = 32usize.max(4 * n);
            (0..g).map(|c| ((c as f64 + 0.5) / g as f64, 0.5)).collect()
        }
    }
}

fn correlation_factor(cells: &[(f64, f64)], corr_length: f64) -> Result<Option<DMatrix<f64>>> {
    if corr_length == 0.0 {
        return Ok(None);
    }
    let m = cells.len();
    let k = DMatrix::from_fn(m, m, |a, b| {
        let (dx, dy) = (cells[a].0 - cells[b].0, cells[a].1 - cells[b].1);
        (-(dx * dx + dy * dy).sqrt() / corr_length).exp()
    });
    k.cholesky()
        .map(|c| Some(c.unpack()))
        .ok_or_else(|| SpatError::InvalidParameter("correlation matrix is not positive definite".into()))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    if cfg.n_steps < 2 {
        return Err(SpatError::InvalidParameter("at least 2 time steps are needed".into()));
    }
    let cells = dense_cells(cfg.layout, cfg.n_sites);
    let m = cells.len();
    let factor = correlation_factor(&cells, cfg.corr_length)?;
    let mean: Vec<f64> = cells
        .iter()
        .map(|&(x, y)| cfg.mean_level * (1.0 + cfg.mean_gradient * ((x - 0.5) + 0.5 * (y - 0.5))))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sites: Vec<usize> = sample(&mut rng, m, cfg.n_sites).into_vec();
    sites.sort_unstable();

    let n = cfg.n_sites;
    let mut field = DMatrix::zeros(n, cfg.n_steps);
    let mut values = DMatrix::zeros(n, cfg.n_steps);
    let mut truth = Vec::with_capacity(cfg.n_steps);
    for t in 0..cfg.n_steps {
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = match &factor {
            Some(l) => l * z,
            None => z,
        };
        let dense: Vec<f64> = (0..m).map(|c| mean[c] + cfg.cv * mean[c] * z[c]).collect();
        truth.push(dense.iter().sum::<f64>() / m as f64);
        for (i, &c) in sites.iter().enumerate() {
            field[(i, t)] = dense[c];
        }
        for i in 0..n {
            let eps = if cfg.noise.sigma_eps() > 0.0 {
                cfg.noise.sigma_eps() * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            values[(i, t)] = field[(i, t)] + eps;
        }
    }

    // map the unit square onto a lat/lon box
    let coords = sites
        .iter()
        .map(|&c| (8.0 + 28.0 * cells[c].1, 68.0 + 30.0 * cells[c].0))
        .collect();
    let panel = ObservationPanel::new(
        values,
        (1..=n).map(|i| format!("s{i}")).collect(),
        Some(coords),
        (1..=cfg.n_steps).map(|t| format!("t{t}")).collect(),
    )?;
    Ok(SynthOutput {
        panel,
        truth: TruthSeries::new(truth)?,
        field,
        cells: sites,
    })
}
