//! Run definitions, benchmark driver and comparison of reconstructions.

pub mod bench;
pub mod config;
pub mod exact;

pub use bench::{compare_fields, compare_reconstructions, estimator_case_study, prepare, run_benchmark, Comparison, Prepared};
pub use config::{build_run, Overrides, RunConfig};
pub use exact::{ExactParameterSpec, ExactTerm, Region};
