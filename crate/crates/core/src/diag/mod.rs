//! Fixed-context diagnostics.
//!
//! Every checkpoint is rescored on one frozen [`ContextBank`], so differences
//! between checkpoints cannot come from resampled rollouts. Confidence
//! intervals resample whole prompts (clusters) with replacement.

mod bank;
mod bootstrap;
mod buckets;
mod gain;
mod intervention;
mod proxy;
mod regression;
mod rows;

pub use bank::{BankContext, ContextBank, ContextLabel, RunMeta, INITIAL_CHECKPOINT};
pub use bootstrap::{
    cluster_bootstrap, cluster_replicates, derive_seed, percentile_ci, BootstrapCi, ClusterIndex,
    DEFAULT_RESAMPLES,
};
pub use buckets::{bucket_trend, Bucket};
pub use gain::{bank_gains, token_gain, GainRecord};
pub use intervention::{selector_intervention_report, sign_test_p, InterventionRow};
pub use proxy::{q3_split, support_proxy_audit, ProxyAudit, SupportProxy};
pub use regression::{
    fit_design, standardized_regression, Coefficient, Design, Predictor, RegressionFit,
    RegressionReport, RegressionSpec, RowFilter,
    RIDGE_JITTER,
};
pub use rows::{diagnostic_rows, DiagnosticRow};
