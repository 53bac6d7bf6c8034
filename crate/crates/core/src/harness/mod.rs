//! Configuration, suite orchestration, convergence verdicts and reports.
//!
//! A run is described by a [`SuiteConfig`] (TOML, versioned), executed by
//! [`run_suite`] and summarised in a [`Report`] that can be emitted as JSON
//! or CSV. Every verdict names the acceptance criterion it certifies.

pub mod config;
pub mod random;
pub mod report;
pub mod suites;

pub use config::{Format, MetricSpec, Suite, SuiteConfig, SymbolConfig};
pub use random::{random_field, random_scalar, random_tracefree, random_vector, FieldKind};
pub use report::{assess, emit, ConvergenceRule, Report, ResolutionRow, SuiteResult, Verdict};
pub use suites::{run_suite, run_suite_with_progress};
