//! Scenario files, metrics, CSV/JSON export and the command line.

mod cli;
mod export;
mod metrics;
mod scenario;

pub use cli::{run_experiment, summary_line, Cli, Command};
pub use export::{
    fmt_f64, read_solves, read_ticks, solves_header, ticks_header, write_run, write_solves, write_ticks, ExportError,
};
pub use metrics::{
    histogram, jump_metrics, longest_alternating_run, nearest_rank, timing_metrics, tracking_error_metrics,
    tracking_errors, HistogramBin, JumpMetrics, MetricsError, MetricsReport, Stats, TimingMetrics, TrackingErrors,
    JUMP_THRESHOLD,
};
pub use scenario::{FieldError, Scenario, SchemeTiming, TrackerSpec, SCHEMA_VERSION};
