//! Drivers for the simulation studies: configuration, presets, the online
//! learning loop, MSE diagnostics, heatmaps and trial averaging.

mod conditions_driver;
mod config;
mod gradcheck;
mod heatmap;
mod mse;
mod presets;
mod runner;
mod tracking;

pub use conditions_driver::check_conditions;
pub use config::{ExperimentConfig, Scenario, SensorConfig};
pub use gradcheck::{gradient_check, MATRIX_TOL, PLACEMENT_TOL, RML_TOL};
pub use heatmap::{heatmap_objective, Heatmap};
pub use mse::{
    final_mse, grid_gram, instantaneous_mse, moving_average, mse_series, trial_average, uniform_grid, AveragedLog,
};
pub use presets::{preset, sim1_truth, sim3_truth, PRESETS};
pub use runner::{
    run_experiment, run_trials, run_with_context, schedule_report, simulate_truth, trial_rng, LogHeader, LogRow,
    RunContext, TrajectoryLog,
};
pub use tracking::{in_band, tracking_segments, Segment};
