//! Experiment configuration, dataset files, data generation and run orchestration.

mod config;
mod dataset;
mod generate;
mod run;

pub use config::{Approach, DataConfig, GeneratorConfig, NoiseConfig, RunConfig};
pub use dataset::{DataFidelity, DataRow, Dataset, Role};
pub use generate::{generate, DataMeta, Generated};
pub use run::{
    build_experiment, compare, evaluate, evaluate_predictions, evaluate_saved, fit_output_scaler, infer, load_data, mean_std,
    report, run, run_with_data, save_data, summarize_params, write_predictions, write_report, Experiment,
    InferSummary, ParamStats, RunData, RunRecord, RunResult,
};
