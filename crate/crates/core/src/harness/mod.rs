//! Operational surface: run configuration, batching, the training loop,
//! sampling, evaluation and run comparison.

mod batches;
mod compare;
mod config;
mod eval;
mod record;
mod train;

pub use batches::{build_probes, BatchSource, WeightRule};
pub use compare::{analysis_csv, analyze_run, compare, summarize, CheckpointAnalysis, Comparison, RunSummary};
pub use config::{Optimizer, RunConfig};
pub use eval::{evaluate, sample, sample_frames, EvalResult, Evaluator};
pub use record::{checkpoint_name, read_metrics, MetricsRow, MetricsWriter, RunRecord, CONFIG_FILE, METRICS_COLUMNS, METRICS_FILE};
pub use train::{ema_update, train, train_step, OptimizerState};
