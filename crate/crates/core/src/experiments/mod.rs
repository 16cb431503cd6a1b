//! Config-driven Monte Carlo studies and their CSV/JSON output.

mod config;
mod report;
mod studies;

pub use config::{parse_config, ExperimentConfig, ModelChoice};
pub use report::{write_records_csv, write_report, write_summary_json};
pub use studies::{
    estimate_replication, observe, run_consistency_sweep, run_consistency_sweep_with, run_normality_study,
    run_normality_study_with, run_rate_study, run_rate_study_with, CellSummary, Monotonicity, NormalityCell,
    RateLevel, RateSummary, Record, StudyKind, StudyReport, Target,
};
