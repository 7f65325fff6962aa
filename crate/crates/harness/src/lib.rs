//! Command-line harness around the `grepsnet` library: run configuration,
//! training with CSV metrics and checkpoints, evaluation, timing and
//! model comparison.

mod config;
mod run;

pub use config::{compatible, mlp_count_for, RunConfig, KEYS};
pub use run::{
    bench_epoch, bench_forward, compare, datasets, evaluate, median, mse, train, train_on,
    write_metrics, Batches, CompareRow, EvalReport, MetricsRow, TrainOutcome, METRICS_HEADER,
};

/// Errors split by CLI exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad configuration or arguments (exit code 1).
    #[error("{0}")]
    Validation(String),
    /// Failure while running (exit code 2).
    #[error(transparent)]
    Runtime(#[from] grepsnet::Error),
}

impl HarnessError {
    pub fn validation(e: grepsnet::Error) -> Self {
        HarnessError::Validation(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
