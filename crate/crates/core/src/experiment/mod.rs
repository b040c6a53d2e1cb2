//! Config-driven experiment runner.

mod config;
mod report;
mod runner;
mod synthetic;

pub use config::{
    build_label_head, build_segment, stack_output_width, DataConfig, ExperimentConfig,
    LayerTemplate, ModelConfig, SyntheticConfig, SyntheticMode, UseCase,
};
pub use report::{emit_report, RunReport, TranscriptSummary};
pub use runner::{run_diversity_sweep, run_experiment, run_experiment_with_transcript};
pub use synthetic::{generate_synthetic_fraud, generate_synthetic_retail};
