//! Experiment sweeps over the case studies, oracle verification suites and
//! instance generation, shared by the `bench` binary and its tests.

pub mod run;
pub mod verify;

use thiserror::Error;

pub use run::{run_experiment, scan_timing, write_csv, Experiment, RunConfig, RunRecord, ScanTiming};
pub use verify::{verify, CheckResult, VerifyReport, SUITES};

/// Directory that overrides where `bench run` writes its CSV.
pub const OUTPUT_DIR_ENV: &str = "BMPC_BENCH_OUT";

#[derive(Debug, Error)]
pub enum BenchError {
    /// Bad names or values in a config; the CLI maps this to exit code 2.
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] bmpc::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
