//! Weighted spatial averages of incomplete station networks: moment
//! estimation, delta-method bias and variance, Monte Carlo checks and
//! optimal weights.

pub mod cli;
pub mod data;
pub mod delta;
pub mod error;
pub mod io;
pub mod moments;
pub mod oa;
pub mod qp;
pub mod sim;
pub mod synth;

pub use data::{
    evaluate_average, validate_panel, AvailabilityModel, NoiseModel, ObservationPanel, TruthSeries,
    WeightVector,
};
pub use delta::{
    delta_bias, delta_variance, rs_moments, standard_error, stat_report, validity_diagnostic, BiasTerms,
    RSMoments, StatReport, VALIDITY_THRESHOLD,
};
pub use error::{Result, SpatError};
pub use moments::{
    build_variance_matrix, build_variance_matrix_with, estimate_moments, estimate_moments_with,
    CovNormalization, MomentSet, MomentSummary, VarianceForm,
};
pub use oa::{
    bias_directional_derivative, minimize_bias, minimize_missing_bias_closed_form, minimize_mse,
    minimize_variance, optimize, Objective, OptimizedScheme,
};
pub use qp::{kkt_certificate, solve_qp, KktCertificate, QpProblem, QpSolution};
pub use sim::{enumerate_exact, enumerate_rs_moments, simulate, EmptyPatternPolicy, ExactResult, SimConfig, SimResult};
pub use synth::{generate, generate_synthetic, Layout, SynthConfig, SynthOutput};
