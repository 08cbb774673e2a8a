//! Episode records, navigation metrics and benchmark suites.

pub mod bench;
pub mod metrics;
pub mod record;

pub use bench::{
    run_benchmark, scene_params, suite_scenes, summarize, write_outputs, write_summary_csv,
    BenchOutput, LoadedPolicy, Policies, SuiteRow, Variant,
};
pub use metrics::{compute_metrics, spl_term, MetricsSummary};
pub use record::{
    read_records, write_episode_log, write_records, EpisodeRecord, Event, EventKind, Phase,
    StepRecord, Termination,
};
