pub mod metrics;
pub mod run;
pub mod setup;

pub use metrics::{sorted_field, PressureWidthRule, WaveMetrics, WaveTracker};
pub use run::{consecutive_differences, refinement_sweep, run_csd, CsdModel, CsdOutcome, RefinementSweep, SweepCell};
pub use setup::{setup_full_csd, setup_zero_flow_csd, CsdSetup, CSD_LENGTH};
