//! Command-line layer: run descriptors, the experiment runner, trajectory
//! emission and a quick verification suite.

mod check;
mod config;
mod run;

pub use check::{run_checks, CheckResult};
pub use config::{
    parse_config, parse_config_str, strategy_label, DatasetSection, FederatedSection, ModelSection,
    OptimizerSection, RunDescriptor, ShiftSection, SweepKey, SweepSection,
};
pub use run::{
    emit_trajectories, mean_std, run, run_into, summarize, sweep, write_summary,
    write_trajectories, RunRecord, RunReport, StrategySummary,
};
