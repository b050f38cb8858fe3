//! Scenario generation, experiment commands and their on-disk outputs.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod scenario;

pub use commands::{
    expected_aggregate, metrics_report, simulate, solve, sweep, verify, Check, MetricsReport,
    Solution, SweepRow, TenantRun, VerifyReport,
};
pub use config::{Config, WorkloadKind, SCHEMA_VERSION};
pub use metrics::{write_manifest, write_solution, write_sweep, write_verify, Manifest};
pub use scenario::{generate_scenario, Scenario};
