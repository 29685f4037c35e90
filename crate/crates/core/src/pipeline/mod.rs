//! Config-driven experiments: load or simulate data, split by time, build
//! fold plans, search, finalize under each strategy, test out of time and
//! write a report bundle.
//!
//! Every output except `manifest.json` is a pure function of the config, so
//! rerunning a config reproduces the bundle byte for byte.

mod config;
mod report;
mod run;

pub use config::{
    BlockWidth, CellFilter, DataSource, ExperimentConfig, LearnerEntry, LearnerSeeds, SacKeyword, SchemeEntry,
    DEFAULT_K,
};
pub use report::{
    emit_report, Bundle, FailureRow, MaeSummaryRow, OracleRow, Report, RobustnessRow, ScatterRow, SelectedRow,
    SummaryRow, FAILURES_FILE, SUMMARY_FILE,
};
pub use run::{
    build_plans, infer_schema, load_data, prepare, run_experiment, write_elbow, PlannedScheme, Prepared, RunOptions,
    RunOutcome, Stage,
};
