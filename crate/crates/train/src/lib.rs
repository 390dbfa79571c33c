//! Training, evaluation, checkpointing, and the seven-model comparison
//! harness for the fusion zoo.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod error;
pub mod metrics;
pub mod trainer;

pub use checkpoint::{load_checkpoint, read_state, save_checkpoint, sidecar_path};
pub use compare::{compare_experiment, csv_string, write_csv, CompareSetup, ExperimentReport, ModelRun};
pub use config::{Profile, TrainConfig};
pub use error::{Result, TrainError};
pub use metrics::{metrics_from_confusion, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use trainer::{evaluate, train, train_steps, ModelSpec, TrainHistory};
