//! Per-horizon MAE/RMSE in raw units, report output and the scarcity sweep.

mod metrics;
mod predict;
mod sweep;

pub use metrics::{
    compute_metrics, format_table, write_csv, CompensatedSum, HorizonMetrics, MetricsReport,
    ReportRow,
};
pub use predict::{evaluate, predict_raw, raw_targets, ForecastData};
pub use sweep::{average_reports, scarcity_sweep, SweepConfig, Variant, DEFAULT_RATES};
