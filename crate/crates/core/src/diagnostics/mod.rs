//! Diagnostics: likelihood-variance studies, run summaries and aggregation,
//! kernel-invariance harnesses and kernel density export.

pub mod invariance;
pub mod kde;
pub mod summary;
pub mod variance;

pub use invariance::{
    enumeration_harness, geweke_harness, FactorGeweke, GewekeModel, HarnessVerdict, IdentityKernel, SvGeweke, ToyModel,
    ToyPgKernel,
};
pub use kde::{kde_export, DensityTable, GridSpec};
pub use summary::{aggregate_runs, state_mean, summarize_run, AggregateTable, RunSummary};
pub use variance::{pf_variance_harness, VarianceReport, VarianceRow};
