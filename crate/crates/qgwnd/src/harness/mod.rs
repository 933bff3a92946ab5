//! Experiment harness: configuration documents, Monte-Carlo drivers with
//! deterministic seed derivation, statistical post-processing, and CSV/JSON
//! persistence.

pub mod config;
pub mod experiments;
pub mod report;
pub mod stats;

pub use config::{
    build_initial, build_setting, CouplingSpec, ExperimentConfig, ExperimentKind, InitialSpec, KindParams,
    MeshSpec, NoiseSpec, Setting,
};
pub use experiments::{run_experiment, trial_rng, worker_pool};
pub use report::{check_consistency, format_records, ReportRecord, BUILD_ID};
pub use stats::{fit_decay_slope, fit_line, ks_distance, mean_stderr, variance_stderr, SlopeFit};
