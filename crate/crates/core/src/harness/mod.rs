//! File-based run harness: configuration, CSV logs, metrics and traces.

mod config;
mod log;
mod metrics;
mod run;

pub use config::{RunConfig, ScenarioOverrides};
pub use log::{read_log, read_log_file, write_log, write_log_file, SensorLog, TruthColumns, SENSOR_COLUMNS, TRUTH_COLUMNS};
pub use metrics::{compute_metrics, metrics_table, rms, Metrics, SegmentMetrics};
pub use run::{compare, run_variant, write_metrics_json, write_trace, write_trace_file, RunInput, RunOutput};
