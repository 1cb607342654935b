//! Monte Carlo experiments, link metrics and configuration.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod validation;

pub use config::{dbm_to_linear, link_snr_db, ExperimentConfig, PosteriorVariance, Scheme};
pub use experiment::{run_experiment, sweep, ExperimentResults, RateStat, TrialOutcome};
pub use metrics::{achievable_rate, coverage_counts, paired_t_test, rate_for_pairs};
pub use validation::{validate, Check};
