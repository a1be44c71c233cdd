//! Experiment runner behind the `fastretrain` binary.
//!
//! Each subcommand has a library entry point so runs can also be driven from
//! tests: [`train`], [`bench_memory`], [`bench_freeze`], [`compare`].

mod bench;
mod compare;
mod run;

pub use bench::{bench_freeze, bench_memory, FreezeRow, MemoryRow};
pub use compare::{compare, CompareRow, RunOutcome};
pub use run::{train, write_metrics_row, MetricsRow, RunStatus, RunSummary, Totals, SUMMARY_SCHEMA};

use fastretrain::Error;

/// Output-directory override for `train` and `compare`.
pub const OUTPUT_DIR_ENV: &str = "FASTRETRAIN_OUTPUT_DIR";

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Divergence { .. } => 3,
        Error::Io(_)
        | Error::Csv(_)
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::InvalidDataset(_)
        | Error::InvalidCheckpoint(_) => 4,
        _ => 1,
    }
}
