//! Library half of the `mrs` binary, split out so tests can drive it.

pub mod args;
pub mod commands;

pub use args::{parse_streaming_args, ArgsError, StreamingArgs};
pub use commands::{dfs_path, run_dfs, run_streaming, DfsCommand, EXIT_CLIENT, EXIT_FAILED, EXIT_OK};
