//! Serving architectures with an analytic latency model, the simulated
//! online experiment harness and the offline-online correlation study.

mod calibrate;
mod constructed;
mod correlate;
mod experiment;
mod latency;
mod scoring;
mod serve;

pub use calibrate::{calibrate_served_creative_scale, served_oracle_lift, CALIBRATION_SEEDS};
pub use constructed::reorder_world_config;
pub use correlate::{
    correlate_offline_online, served_random_log, CorrelateConfig, Correlation, CorrelationRow, CorrelationTable, LiftKind,
    NamedRanker,
};
pub use experiment::{
    paired_z, run_experiment, write_json, write_reports_csv, write_reports_json, write_traces_csv,
    ExperimentConfig, ExperimentOutput, ExperimentReport, Lifts, TraceRow,
};
pub use latency::{plan_latency, Architecture, ArchitecturePlan, CostsNs, Nanos, StageCosts};
pub use scoring::{AdScoreTable, AdScorer, CreativeAwareAdScorer, OracleAdScorer, ProfileRanker, ProfileScoreTable};
pub use serve::{
    click_uniform, make_request, random_creative, run_request, Arm, Models, Request, ServeOptions, ServedPage, ServedSlot,
};
