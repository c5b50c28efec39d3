//! Training, transfer, leave-one-location-out evaluation, metrics, reports
//! and checkpoints.

mod checkpoint;
mod eval;
mod metrics;
mod report;
mod train;
mod transfer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Provenance, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use eval::{display_name, fold_dataset, fold_threads, leave_one_out, predict_location, FoldSeries, FoldStrategy, LooOutcome};
pub use metrics::{grad_rmse, improvement, nrmse, rmse};
pub use report::{
    average_metrics, comparison_csv, config_hash, EvalReport, ImprovementTable, LocationMetrics, MetricSummary,
    ReportMetadata, CSV_HEADER,
};
pub use train::{
    chronological_split, continue_training, fit_neural, frame_batches, teacher_forced_mse, train, EpochLoss,
    FrameBatch, LoopSettings, TrainConfig, TrainOutcome, VALIDATION_FRACTION,
};
pub use transfer::{fine_tune, transfer, FineTuneConfig, TransferConfig, TransferOutcome};
