//! Config-driven sweeps over `(n, x)` grids, persisted as resumable CSV.

mod config;
mod report;
mod sweep;

pub use config::{Engine, McSettings, SweepConfig, XRule};
pub use report::{
    convergence_report, trend, ConvergenceReport, Trajectory, TrajectoryPoint, Trend,
    WorstDeviation,
};
pub use sweep::{
    compute_row, conjecture_probe, read_csv, row_seed, run_sweep, run_sweep_limited, Manifest,
    RatioRow, SweepOutcome, CSV_HEADER,
};
