//! Experiment harness: config files, persisted checkpoints, result tables and
//! the staged pipeline driven by the CLI.

pub mod checkpoint;
pub mod config;
mod error;
pub mod pipeline;
pub mod results;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_registry, save_checkpoint,
    save_registry, CheckpointError,
};
pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use pipeline::{
    run_experiment, stage_eval, stage_gen, stage_report, stage_select, stage_train, with_workers,
    EvalParts, Layout, RunState,
};
pub use results::{
    check_dominance, read_results_csv, render_report, summarize, write_results_csv, ResultRow,
    SummaryRow,
};
