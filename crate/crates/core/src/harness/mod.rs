//! Metrics, experiment configuration, the end-to-end pipeline and reports.

mod config;
mod metrics;
mod pipeline;
mod report;

pub use config::{
    bench_std_synthetic, BaselineConfig, DataConfig, ExperimentConfig, NoiseConfig, ReportFormat, SmallLossScope, Strategy, BENCH_STD,
};
pub use metrics::{f1_score, selection_metrics, SelectionMetrics};
pub use pipeline::{
    compare_strategies, prepare_data, run_experiment, run_experiment_with_phase2, select, warmup_losses, ExperimentReport, PreparedData,
    RunRecord, Selection,
};
pub use report::{aggregate, render_report, ReportRow, RowKind};
