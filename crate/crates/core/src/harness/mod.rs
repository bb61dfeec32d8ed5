//! Training loop, checkpoints and the evaluation protocols.

mod checkpoint;
mod config;
mod metrics;
mod protocols;
mod train;

pub use checkpoint::{checkpoint_load, checkpoint_resume, checkpoint_save};
pub use config::{LossKind, RunConfig, TrainConfig};
pub use metrics::{
    evaluate, metrics_csv, parse_metrics_csv, read_metrics, write_metrics, EvalMetrics,
    MetricRecord,
};
pub use protocols::{
    ablation_run, low_frequency_fraction, mode_coverage_report, spectrum_report, zero_shot_eval,
    AblationReport, AblationRow, BlockCoverage, SpectrumReport, ZeroShotCell, ZeroShotModel,
    ZeroShotTable,
};
pub use train::{continue_training, train_run, RunOptions, TrainOutcome, TrainState};
