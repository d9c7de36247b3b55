//! Estimation and testing of between-study heterogeneity for
//! standardized-mean-difference meta-analysis.
//!
//! The crate is organised around a heterogeneity statistic with *constant*
//! weights — each study weighted by its effective sample size rather than by
//! an estimated inverse variance — whose null distribution is a weighted sum
//! of one-degree chi-squares and can therefore be evaluated exactly. On top
//! of that sit moment and median point estimators of the heterogeneity
//! variance, profile and inversion confidence intervals, significance tests
//! under several null approximations, and a deterministic simulation engine
//! for studying all of the above.

pub mod effects;
pub mod error;
pub mod gauss;
pub mod htest;
pub mod intervals;
pub mod point;
pub mod qstat;
pub mod quadform;
pub mod sim;
pub mod solve;

pub use effects::{
    bias_correction_factor, effective_sample_size, hedges_g, sample_g, var_g_conditional,
    var_g_unconditional, EffectEstimate, GSampler, StudySummary, VarianceMode,
};
pub use error::{Error, Result};
pub use htest::{null_cdf, p_value, test_heterogeneity, ApproxMethod, TestResult};
pub use intervals::{interval, IntervalMethod, Tau2Interval};
pub use point::{
    estimate_tau2, restricted_loglik, tau2_dl, tau2_kdb, tau2_median, tau2_moment, tau2_mp,
    tau2_reml, tau2_upper_bound, Tau2Estimate, Tau2Method,
};
pub use quadform::{
    chi_square_null_cdf, corrected_df_cdf, corrected_null_df, ess_mixture_cdf, farebrother_cdf,
    gamma_two_moment_cdf, iv_mixture_cdf, mixture_cdf, mixture_from_q, q_moments,
    ChiSquareMixture,
};
pub use qstat::{
    expected_q, q_f, q_generalized, q_iv, q_with_scheme, QValue, WeightScheme,
};
pub use sim::{run_grid, CellParams, CellResult, GridRun, MetricRow, NSpec, SimConfig};
