//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::{evaluate_average, AvailabilityModel, NoiseModel, ObservationPanel, TruthSeries, WeightVector};
use crate::delta::stat_report;
use crate::error::{Result, SpatError, EXIT_CODES};
use crate::io::{self, fmt_f64};
use crate::moments::{estimate_moments_with, CovNormalization, MomentSet, MomentSummary, VarianceForm};
use crate::oa::{optimize, Objective};
use crate::qp::inf_norm;
use crate::sim::{enumerate_exact, simulate, EmptyPatternPolicy, SimConfig, MAX_ENUMERATION_SITES};
use crate::synth::{generate, Layout, SynthConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn exit_code_help() -> String {
    let mut s = String::from("Exit codes:\n  0  success\n  2  usage error\n");
    for (cat, code) in EXIT_CODES {
        s.push_str(&format!("  {code:<2} {cat}\n"));
    }
    s.push_str(
        "\nErrors are reported on stderr as a single line `error[<category>]: <message>`.\n\
         A --config file holds `key = value` lines using the long flag names;\n\
         flags given on the command line take precedence.",
    );
    s
}

#[derive(Debug, Parser)]
#[command(name = "spatavg", version, about = "Spatial averages of incomplete station networks", after_help = exit_code_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate moment statistics and write moments.toml
    Moments(Flags),
    /// Delta-method bias, variance, MSE and SE over an availability grid
    Estimate(Flags),
    /// Monte Carlo ensemble statistics next to the delta estimates
    Simulate(Flags),
    /// Optimal weights for the chosen objective
    Optimize(Flags),
    /// Standard error, mean and spread per time block
    SeReport(Flags),
    /// Generate a synthetic panel and truth series
    Synth(Flags),
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// Panel CSV: location_id,lat,lon,<time ids>
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Truth CSV: t,value
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Availability, a single value or start:stop:step
    #[arg(long)]
    alpha: Option<String>,
    /// Measurement noise standard deviation
    #[arg(long)]
    sigma_eps: Option<f64>,
    /// bias, variance or mse
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// key = value file supplying defaults for any flag
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weighting scheme: uniform, bias, variance or mse
    #[arg(long)]
    scheme: Option<String>,
    /// Weights CSV with location_id and beta columns; overrides --scheme
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Covariance divisor: unbiased (N-1) or population (N)
    #[arg(long)]
    normalization: Option<String>,
    /// Variance kernel: compact or expanded
    #[arg(long)]
    variance_form: Option<String>,
    /// Time blocks as name:start:end[,...], 0-based with exclusive end
    #[arg(long)]
    blocks: Option<String>,
    /// Also evaluate the exact expectation over all availability patterns
    #[arg(long)]
    exact: bool,
    /// Empty availability patterns: resample or error
    #[arg(long)]
    empty_patterns: Option<String>,
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    corr_length: Option<f64>,
    /// grid2d or line1d
    #[arg(long)]
    layout: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubcommandKind {
    Moments,
    Estimate,
    Simulate,
    Optimize,
    SeReport,
    Synth,
}

impl SubcommandKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Moments => "moments",
            Self::Estimate => "estimate",
            Self::Simulate => "simulate",
            Self::Optimize => "optimize",
            Self::SeReport => "se-report",
            Self::Synth => "synth",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Uniform,
    Optimal(Objective),
    File(PathBuf),
}

impl Scheme {
    fn label(&self) -> String {
        match self {
            Scheme::Uniform => "uniform".into(),
            Scheme::Optimal(o) => o.to_string(),
            Scheme::File(_) => "file".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

/// Fully resolved run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: SubcommandKind,
    pub panel_path: Option<PathBuf>,
    pub truth_path: Option<PathBuf>,
    pub alpha: Vec<f64>,
    pub sigma_eps: f64,
    pub objective: Objective,
    pub seed: u64,
    pub realizations: usize,
    pub output_dir: PathBuf,
    pub scheme: Scheme,
    pub normalization: CovNormalization,
    pub variance_form: VarianceForm,
    pub blocks: Option<Vec<Block>>,
    pub exact: bool,
    pub empty_patterns: EmptyPatternPolicy,
    pub sites: usize,
    pub steps: usize,
    pub corr_length: f64,
    pub layout: Layout,
    /// Parameter echo for output headers.
    echo: Vec<(String, String)>,
}

/// Parses `a` or `start:stop:step` into availabilities in `(0, 1]`.
pub fn parse_alpha_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let num = |p: &str| {
        p.parse::<f64>()
            .map_err(|_| SpatError::Parse(format!("bad alpha value '{p}'")))
    };
    let grid = match parts.as_slice() {
        [a] => vec![num(a)?],
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || !(stop >= start) {
                return Err(SpatError::Parse(format!("bad alpha grid '{s}'")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            if count > 100_000 {
                return Err(SpatError::Parse(format!("alpha grid '{s}' is too long")));
            }
            (0..=count)
                .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
                .collect()
        }
        _ => return Err(SpatError::Parse(format!("bad alpha grid '{s}'"))),
    };
    for &a in &grid {
        AvailabilityModel::new(a)?;
    }
    Ok(grid)
}

fn parse_blocks(s: &str) -> Result<Vec<Block>> {
    s.split(',')
        .map(|b| {
            let p: Vec<&str> = b.trim().split(':').collect();
            let idx = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| SpatError::Parse(format!("bad block bound '{v}' in '{b}'")))
            };
            match p.as_slice() {
                [name, start, end] => Ok(Block {
                    name: name.trim().to_string(),
                    start: idx(start)?,
                    end: idx(end)?,
                }),
                _ => Err(SpatError::Parse(format!("block '{b}' is not name:start:end"))),
            }
        })
        .collect()
}

/// Reads a flat `key = value` file. Blank lines and `#` comments are
/// skipped; keys may use `-` or `_`.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SpatError::Parse(format!("config line {}: expected key = value", k + 1)))?;
        let value = value.trim().trim_matches('"');
        map.insert(key.trim().replace('_', "-"), value.to_string());
    }
    Ok(map)
}

fn merge_config(mut f: Flags, map: &BTreeMap<String, String>) -> Result<Flags> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| SpatError::Parse(format!("config key '{key}': bad value '{v}'")))
    }
    for (key, v) in map {
        let v = v.as_str();
        match key.as_str() {
            "panel" => {
                f.panel.get_or_insert_with(|| v.into());
            }
            "truth" => {
                f.truth.get_or_insert_with(|| v.into());
            }
            "alpha" => {
                f.alpha.get_or_insert_with(|| v.into());
            }
            "sigma-eps" => {
                if f.sigma_eps.is_none() {
                    f.sigma_eps = Some(num(key, v)?);
                }
            }
            "objective" => {
                f.objective.get_or_insert_with(|| v.into());
            }
            "seed" => {
                if f.seed.is_none() {
                    f.seed = Some(num(key, v)?);
                }
            }
            "realizations" => {
                if f.realizations.is_none() {
                    f.realizations = Some(num(key, v)?);
                }
            }
            "out" => {
                f.out.get_or_insert_with(|| v.into());
            }
            "scheme" => {
                f.scheme.get_or_insert_with(|| v.into());
            }
            "weights" => {
                f.weights.get_or_insert_with(|| v.into());
            }
            "normalization" => {
                f.normalization.get_or_insert_with(|| v.into());
            }
            "variance-form" => {
                f.variance_form.get_or_insert_with(|| v.into());
            }
            "blocks" => {
                f.blocks.get_or_insert_with(|| v.into());
            }
            "exact" => f.exact |= num::<bool>(key, v)?,
            "empty-patterns" => {
                f.empty_patterns.get_or_insert_with(|| v.into());
            }
            "sites" => {
                if f.sites.is_none() {
                    f.sites = Some(num(key, v)?);
                }
            }
            "steps" => {
                if f.steps.is_none() {
                    f.steps = Some(num(key, v)?);
                }
            }
            "corr-length" => {
                if f.corr_length.is_none() {
                    f.corr_length = Some(num(key, v)?);
                }
            }
            "layout" => {
                f.layout.get_or_insert_with(|| v.into());
            }
            other => return Err(SpatError::Parse(format!("unknown config key '{other}'"))),
        }
    }
    Ok(f)
}

impl RunConfig {
    fn resolve(subcommand: SubcommandKind, flags: Flags) -> Result<Self> {
        let flags = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| SpatError::Io(format!("{}: {e}", path.display())))?;
                merge_config(flags.clone(), &parse_config_text(&text)?)?
            }
            None => flags,
        };
        let alpha = match &flags.alpha {
            Some(s) => parse_alpha_grid(s)?,
            None if subcommand == SubcommandKind::Estimate => crate::sim::default_alpha_grid(),
            None => vec![1.0],
        };
        let sigma_eps = flags.sigma_eps.unwrap_or(0.0);
        NoiseModel::new(sigma_eps)?;
        let objective: Objective = flags.objective.as_deref().unwrap_or("mse").parse()?;
        let scheme = match (&flags.weights, flags.scheme.as_deref()) {
            (Some(p), _) => Scheme::File(p.clone()),
            (None, None | Some("uniform")) => Scheme::Uniform,
            (None, Some(s)) => Scheme::Optimal(s.parse()?),
        };
        let normalization = match flags.normalization.as_deref().unwrap_or("unbiased") {
            "unbiased" => CovNormalization::Unbiased,
            "population" => CovNormalization::Population,
            other => return Err(SpatError::Parse(format!("unknown normalization '{other}'"))),
        };
        let variance_form = match flags.variance_form.as_deref().unwrap_or("compact") {
            "compact" => VarianceForm::Compact,
            "expanded" => VarianceForm::Expanded,
            other => return Err(SpatError::Parse(format!("unknown variance form '{other}'"))),
        };
        let empty_patterns = match flags.empty_patterns.as_deref().unwrap_or("resample") {
            "resample" => EmptyPatternPolicy::Resample,
            "error" => EmptyPatternPolicy::Error,
            other => return Err(SpatError::Parse(format!("unknown empty-pattern policy '{other}'"))),
        };
        let layout: Layout = flags.layout.as_deref().unwrap_or("grid2d").parse()?;
        let blocks = flags.blocks.as_deref().map(parse_blocks).transpose()?;

        let needs_data = subcommand != SubcommandKind::Synth;
        if needs_data {
            for (name, p) in [("--panel", &flags.panel), ("--truth", &flags.truth)] {
                match p {
                    None => return Err(SpatError::Parse(format!("{name} is required"))),
                    Some(p) if !p.is_file() => {
                        return Err(SpatError::Io(format!("{}: no such file", p.display())))
                    }
                    _ => {}
                }
            }
        }

        let mut echo: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| echo.push((k.to_string(), v));
        if needs_data {
            put("panel", flags.panel.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
            put("truth", flags.truth.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
            put("alpha", alpha.iter().map(|&a| fmt_f64(a)).collect::<Vec<_>>().join(";"));
            put("normalization", flags.normalization.clone().unwrap_or_else(|| "unbiased".into()));
            put("variance-form", flags.variance_form.clone().unwrap_or_else(|| "compact".into()));
        }
        put("sigma-eps", fmt_f64(sigma_eps));
        match subcommand {
            SubcommandKind::Optimize => put("objective", objective.to_string()),
            SubcommandKind::Estimate | SubcommandKind::Simulate | SubcommandKind::SeReport => {
                put("scheme", scheme.label());
                if let Scheme::File(p) = &scheme {
                    put("weights", p.display().to_string());
                }
            }
            _ => {}
        }
        let seed = flags.seed.unwrap_or(0);
        let realizations = flags.realizations.unwrap_or(5000);
        if subcommand == SubcommandKind::Simulate {
            put("seed", seed.to_string());
            put("realizations", realizations.to_string());
            put("exact", flags.exact.to_string());
            put("empty-patterns", flags.empty_patterns.clone().unwrap_or_else(|| "resample".into()));
        }
        if subcommand == SubcommandKind::SeReport {
            put("blocks", flags.blocks.clone().unwrap_or_else(|| "all".into()));
        }
        let sites = flags.sites.unwrap_or(12);
        let steps = flags.steps.unwrap_or(120);
        let corr_length = flags.corr_length.unwrap_or(0.2);
        if subcommand == SubcommandKind::Synth {
            put("seed", seed.to_string());
            put("sites", sites.to_string());
            put("steps", steps.to_string());
            put("corr-length", fmt_f64(corr_length));
            put("layout", layout.to_string());
        }

        Ok(Self {
            subcommand,
            panel_path: flags.panel,
            truth_path: flags.truth,
            alpha,
            sigma_eps,
            objective,
            seed,
            realizations,
            output_dir: flags.out.unwrap_or_else(|| PathBuf::from(".")),
            scheme,
            normalization,
            variance_form,
            blocks,
            exact: flags.exact,
            empty_patterns,
            sites,
            steps,
            corr_length,
            layout,
            echo,
        })
    }

    fn header(&self) -> Vec<String> {
        let params: Vec<String> = self.echo.iter().map(|(k, v)| format!("{k}={v}")).collect();
        vec![format!("spatavg {VERSION} {} {}", self.subcommand.name(), params.join(" "))]
    }

    fn noise(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.sigma_eps)
    }

    fn load(&self) -> Result<(ObservationPanel, TruthSeries)> {
        let panel = io::read_panel(self.panel_path.as_deref().expect("checked in resolve"))?;
        let truth = io::read_truth(self.truth_path.as_deref().expect("checked in resolve"), Some(panel.time_ids()))?;
        Ok((panel, truth))
    }

    fn moments(&self, panel: &ObservationPanel, truth: &TruthSeries, avail: &AvailabilityModel) -> Result<MomentSet> {
        estimate_moments_with(panel, truth, &self.noise()?, avail, self.normalization)
    }

    fn weights(&self, panel: &ObservationPanel, m: &MomentSet, avail: &AvailabilityModel) -> Result<WeightVector> {
        match &self.scheme {
            Scheme::Uniform => Ok(WeightVector::uniform(panel.n_sites())),
            Scheme::Optimal(o) => Ok(optimize(m, avail, *o, self.variance_form)?.solution.beta),
            Scheme::File(p) => io::read_weights(p, panel.location_ids()),
        }
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        io::write_atomic(&self.output_dir.join(name), text)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn run_moments(cfg: &RunConfig) -> Result<()> {
    let (panel, truth) = cfg.load()?;
    let avail = AvailabilityModel::new(cfg.alpha[0])?;
    let m = cfg.moments(&panel, &truth, &avail)?;
    let summary = MomentSummary::new(&m, panel.location_ids(), panel.coords());
    let mut text: String = cfg.header().iter().map(|h| format!("# {h}\n")).collect();
    text.push_str(&summary.to_toml()?);
    cfg.write("moments.toml", &text)
}

fn run_estimate(cfg: &RunConfig) -> Result<()> {
    let (panel, truth) = cfg.load()?;
    let mut rows = Vec::new();
    for &a in &cfg.alpha {
        let avail = AvailabilityModel::new(a)?;
        let m = cfg.moments(&panel, &truth, &avail)?;
        let beta = cfg.weights(&panel, &m, &avail)?;
        let r = stat_report(&m, &beta, &avail)?;
        rows.push(vec![
            fmt_f64(a),
            cfg.scheme.label(),
            fmt_f64(r.bias_sq),
            fmt_f64(r.variance),
            fmt_f64(r.mse),
            fmt_f64(r.se),
            fmt_opt(r.validity_ratio),
            fmt_f64(r.bias_term_sampling),
            fmt_f64(r.bias_term_missing),
        ]);
    }
    let header = [
        "alpha", "scheme", "bias_sq", "variance", "mse", "se", "validity_ratio", "term_sampling", "term_missing",
    ];
    cfg.write("estimate.csv", &io::csv_text(&cfg.header(), &header, &rows)?)
}

fn run_simulate(cfg: &RunConfig) -> Result<()> {
    let (panel, truth) = cfg.load()?;
    if cfg.exact && panel.n_sites() > MAX_ENUMERATION_SITES {
        return Err(SpatError::TooManySites {
            n: panel.n_sites(),
            max: MAX_ENUMERATION_SITES,
        });
    }
    let mut rows = Vec::new();
    for &a in &cfg.alpha {
        let avail = AvailabilityModel::new(a)?;
        let m = cfg.moments(&panel, &truth, &avail)?;
        let beta = cfg.weights(&panel, &m, &avail)?;
        let sim_cfg = SimConfig {
            n_realizations: cfg.realizations,
            seed: cfg.seed,
            alpha_grid: vec![a],
            empty_pattern_policy: cfg.empty_patterns,
        };
        let s = simulate(&panel, &truth, &beta, &avail, &sim_cfg)?;
        let d = stat_report(&m, &beta, &avail)?;
        let mut row = vec![
            fmt_f64(a),
            cfg.scheme.label(),
            fmt_f64(s.sim_bias_sq),
            fmt_f64(s.sim_variance),
            fmt_f64(s.mc_stderr_bias),
            fmt_f64(s.mc_stderr_var),
            fmt_f64(d.bias_sq),
            fmt_f64(d.variance),
        ];
        if cfg.exact {
            let e = enumerate_exact(&panel, &truth, &beta, &avail)?;
            row.push(fmt_f64(e.bias_sq));
            row.push(fmt_f64(e.variance));
        }
        rows.push(row);
    }
    let mut header = vec![
        "alpha", "scheme", "sim_bias_sq", "sim_variance", "mc_stderr_bias", "mc_stderr_var", "delta_bias_sq",
        "delta_variance",
    ];
    if cfg.exact {
        header.extend(["exact_bias_sq", "exact_variance"]);
    }
    cfg.write("simulate.csv", &io::csv_text(&cfg.header(), &header, &rows)?)
}

fn run_optimize(cfg: &RunConfig) -> Result<()> {
    let (panel, truth) = cfg.load()?;
    let mut weight_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for &a in &cfg.alpha {
        let avail = AvailabilityModel::new(a)?;
        let m = cfg.moments(&panel, &truth, &avail)?;
        let opt = optimize(&m, &avail, cfg.objective, cfg.variance_form)?;
        let s = &opt.solution;
        for i in 0..panel.n_sites() {
            let (lat, lon) = match panel.coords() {
                Some(c) => (fmt_f64(c[i].0), fmt_f64(c[i].1)),
                None => (String::new(), String::new()),
            };
            weight_rows.push(vec![
                fmt_f64(a),
                panel.location_ids()[i].clone(),
                lat,
                lon,
                fmt_f64(s.beta.as_slice()[i]),
                fmt_f64(s.rho[i]),
                u8::from(s.active_set.contains(&i)).to_string(),
                fmt_f64(s.kkt_residual),
            ]);
        }
        let r = &opt.report;
        let q = match cfg.objective {
            Objective::Bias => m.d1.clone(),
            Objective::Variance => crate::oa::variance_objective(&m, &avail, cfg.variance_form),
            Objective::Mse => crate::oa::mse_objective(&m, &avail, cfg.variance_form),
        };
        summary_rows.push(vec![
            fmt_f64(a),
            cfg.objective.to_string(),
            fmt_f64(s.objective),
            fmt_f64(s.lambda),
            fmt_f64(s.kkt_residual),
            fmt_f64(1e-8 * (1.0 + inf_norm(&q))),
            s.iterations.to_string(),
            s.ridge_applied.to_string(),
            s.beta.support_count(1e-6).to_string(),
            fmt_f64(r.bias_sq),
            fmt_f64(r.variance),
            fmt_f64(r.mse),
            fmt_f64(r.se),
            fmt_opt(r.validity_ratio),
        ]);
    }
    let header = cfg.header();
    let weights = io::csv_text(
        &header,
        &["alpha", "location_id", "lat", "lon", "beta", "rho", "active", "kkt_residual"],
        &weight_rows,
    )?;
    let summary = io::csv_text(
        &header,
        &[
            "alpha", "objective", "objective_value", "lambda", "kkt_residual", "kkt_tolerance", "iterations",
            "ridge_applied", "support", "bias_sq", "variance", "mse", "se", "validity_ratio",
        ],
        &summary_rows,
    )?;
    cfg.write("weights.csv", &weights)?;
    cfg.write("optimize_summary.csv", &summary)
}

fn run_se_report(cfg: &RunConfig) -> Result<()> {
    let (panel, truth) = cfg.load()?;
    let noise = cfg.noise()?;
    let avail = AvailabilityModel::new(cfg.alpha[0])?;
    let full = cfg.moments(&panel, &truth, &avail)?;
    let beta = cfg.weights(&panel, &full, &avail)?;
    let blocks = cfg.blocks.clone().unwrap_or_else(|| {
        vec![Block {
            name: "all".into(),
            start: 0,
            end: panel.n_steps(),
        }]
    });
    let all = vec![true; panel.n_sites()];
    let mut rows = Vec::new();
    for b in &blocks {
        let bp = panel.time_block(b.start, b.end)?;
        let bt = truth.block(b.start, b.end)?;
        let m = estimate_moments_with(&bp, &bt, &noise, &avail, cfg.normalization)?;
        let se = crate::delta::standard_error(&m, &beta);
        let series: Vec<f64> = (0..bp.n_steps())
            .map(|t| evaluate_average(&bp.column(t), &beta, &all))
            .collect::<Result<_>>()?;
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let stdev = (series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        rows.push(vec![
            b.name.clone(),
            b.start.to_string(),
            b.end.to_string(),
            bp.n_steps().to_string(),
            fmt_f64(se),
            fmt_f64(mean),
            fmt_f64(stdev),
            if mean != 0.0 { fmt_f64(se / mean) } else { String::new() },
            beta.support_count(1e-6).to_string(),
        ]);
    }
    let header = ["block", "start", "end", "n_steps", "se", "mean", "stdev", "se_over_mean", "support"];
    cfg.write("se_report.csv", &io::csv_text(&cfg.header(), &header, &rows)?)
}

fn run_synth(cfg: &RunConfig) -> Result<()> {
    let mut sc = SynthConfig::new(cfg.sites, cfg.steps, cfg.corr_length, cfg.noise()?, cfg.seed);
    sc.layout = cfg.layout;
    let out = generate(&sc)?;
    let header = cfg.header();
    let panel = io::panel_text(&out.panel, &header)?;
    let truth = io::truth_text(&out.truth, out.panel.time_ids(), &header)?;
    cfg.write("panel.csv", &panel)?;
    cfg.write("truth.csv", &truth)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    if !cfg.output_dir.is_dir() {
        std::fs::create_dir_all(&cfg.output_dir)
            .map_err(|e| SpatError::Io(format!("{}: {e}", cfg.output_dir.display())))?;
    }
    match cfg.subcommand {
        SubcommandKind::Moments => run_moments(cfg),
        SubcommandKind::Estimate => run_estimate(cfg),
        SubcommandKind::Simulate => run_simulate(cfg),
        SubcommandKind::Optimize => run_optimize(cfg),
        SubcommandKind::SeReport => run_se_report(cfg),
        SubcommandKind::Synth => run_synth(cfg),
    }
}

/// Parses flags into a [`RunConfig`]. Help and version requests come back
/// as the clap error that renders them.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Result<RunConfig>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let (kind, flags) = match cli.command {
        Command::Moments(f) => (SubcommandKind::Moments, f),
        Command::Estimate(f) => (SubcommandKind::Estimate, f),
        Command::Simulate(f) => (SubcommandKind::Simulate, f),
        Command::Optimize(f) => (SubcommandKind::Optimize, f),
        Command::SeReport(f) => (SubcommandKind::SeReport, f),
        Command::Synth(f) => (SubcommandKind::Synth, f),
    };
    Ok(RunConfig::resolve(kind, flags))
}

/// Runs the tool and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match parse_args(args) {
        Ok(Ok(cfg)) => cfg,
        Ok(Err(e)) => return report(&e),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match run(&cfg) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &SpatError) -> i32 {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error[{}]: {msg}", e.category());
    e.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_grids() {
        assert_eq!(parse_alpha_grid("0.5:1.0:0.1").unwrap(), vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        assert_eq!(parse_alpha_grid("0.8").unwrap(), vec![0.8]);
        assert_eq!(parse_alpha_grid("0.1:1:0.1").unwrap().len(), 10);
        for bad in ["0", "1.2", "0.5:0.4:0.1", "a", "0.1:1", "0.1:1:0"] {
            assert!(parse_alpha_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_file_and_precedence() {
        let map = parse_config_text("# run\nalpha = 0.5\nsigma_eps = 0.3\nseed=9\n").unwrap();
        let flags = Flags {
            seed: Some(1),
            ..Flags::default()
        };
        let f = merge_config(flags, &map).unwrap();
        assert_eq!(f.seed, Some(1));
        assert_eq!(f.sigma_eps, Some(0.3));
        assert_eq!(f.alpha.as_deref(), Some("0.5"));
        assert!(merge_config(Flags::default(), &parse_config_text("colour = red").unwrap()).is_err());
        assert!(parse_config_text("no equals sign").is_err());
    }

    #[test]
    fn blocks_parse() {
        let b = parse_blocks("jun:0:30, jul:30:61").unwrap();
        assert_eq!(b[1], Block { name: "jul".into(), start: 30, end: 61 });
        assert!(parse_blocks("jun:0").is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let mut codes: Vec<i32> = EXIT_CODES.iter().map(|c| c.1).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), EXIT_CODES.len());
        assert!(!codes.contains(&0) && !codes.contains(&2));
    }
}
