//! Run configuration, campaign drivers, the append-only trial store, and
//! report emission.

pub mod campaign;
pub mod config;
pub mod manifest;
pub mod report;
pub mod store;

pub use campaign::{
    analyze_run, classify_store, read_results, replay_consistency, run_buckets, run_campaign,
    run_question_concurrent, write_results, Campaign, CampaignOutcome, ClassifySummary,
    BUCKETS_FILE, MANIFEST_FILE, RESULTS_FILE, STORE_FILE,
};
pub use config::{BackendKind, BackendSection, DatasetSection, RunConfig};
pub use manifest::{now_ms, RunManifest, RunTotals};
pub use report::{
    blurt_table, bucket_table, build_threshold_sweep, likelihood_table, method_table, report_meta,
    threshold_sweep_table, write_report, MethodSummary, ReportFiles, ThresholdSweepRow,
    REPORT_KINDS,
};
pub use store::{load_trials, load_trials_for_resume, TrialFilter, TrialStore};
