//! External-process worker contract.
//!
//! Mappers and reducers are arbitrary executables. They read newline
//! terminated lines on stdin and write `key TAB value` lines on stdout; exit
//! status 0 means success. Workers see these environment variables:
//!
//! * `MRS_TASK_KIND`: `map` or `reduce`
//! * `MRS_TASK_INDEX`: split index for maps, partition index for reduces
//! * `MRS_ATTEMPT`: attempt number, starting at 1
//!
//! Only text records are supported.

mod cache;
pub mod codec;
mod worker;

use std::time::Duration;

use thiserror::Error;

pub use cache::{ship_files, staging_dir, CacheEntry, FileSource, LocalFiles};
pub use codec::{decode_worker_line, encode_record, CodecError, StreamingCodec};
pub use worker::{
    resolve_program, run_worker, spawn_worker, split_command, CancelToken, WorkerExit,
    WorkerOptions, WorkerResult, DEFAULT_WORKER_TIMEOUT, STDERR_TAIL_CAP,
};

pub const ENV_TASK_KIND: &str = "MRS_TASK_KIND";
pub const ENV_TASK_INDEX: &str = "MRS_TASK_INDEX";
pub const ENV_ATTEMPT: &str = "MRS_ATTEMPT";

#[derive(Debug, Error)]
pub enum StreamingError {
    #[error("empty command line")]
    EmptyCommand,
    #[error("cannot start {program}: {reason}")]
    SpawnFailed { program: String, reason: String },
    #[error("worker exceeded time limit of {0:?}")]
    Timeout(Duration),
    #[error("worker cancelled")]
    Cancelled,
    #[error("worker closed stdin before consuming its input")]
    BrokenPipe,
    #[error("duplicate cache file name {0}")]
    DuplicateName(String),
    #[error("cache source {0} is missing")]
    SourceMissing(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(String),
}
