//! Monte-Carlo experiments: configuration, sweeps and CSV output.

pub mod config;
pub mod csv;
pub mod sweep;

pub use config::{EstimatorKind, ProfileKind, ScenarioConfig};
pub use csv::{emit_csv, parse_csv, write_bounds_csv, write_csv};
pub use sweep::{
    bounds_table, calibrate_threshold, localize, run_sweep, simulate, trial_errors, trial_rng, Experiment,
    SweepPoint, SweepResult, TrialErrors, TrialReport,
};
