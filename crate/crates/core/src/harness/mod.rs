//! Experiment orchestration: config parsing, runners, and report output.

pub mod config;
pub mod presets;
pub mod report;
pub mod run;

pub use config::{ConfigFormat, Experiment, ExperimentConfig, MeasureSpec, ProfileChoice};
pub use report::{ConstantsReport, DecayReport, Report, Slack, StabilityReport, ThetaReport};
pub use run::{run, run_constants, run_decay, run_stability, run_theta_check};
