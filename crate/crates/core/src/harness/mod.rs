//! Experiment configs, metrics, run records, reports and image grids.

pub mod config;
pub mod grid;
pub mod metrics;
pub mod record;
pub mod report;

pub use config::{DatasetConfig, ExperimentConfig, ModelSection, SCHEMA_VERSION};
pub use grid::{image_grid, save_grid};
pub use metrics::{evaluate, AccuracyMatrix, AccuracyRow, CurvePoint, Predictor};
pub use record::{run_config, run_experiment, write_record, MemoryReport, RunRecord};
pub use report::{emit_report, group_records, mean_std, SummaryRow};
