//! Job engine: split planning, map attempts, hash partitioning, sorted
//! spills, k-way merge, reduce attempts, re-execution and output commit.
//!
//! Reduce attempts start only after every map task has committed. A single
//! scheduler thread owns the job state machine and consumes completion events
//! from attempt threads in whatever order they arrive.

mod attempt;
mod scheduler;
mod shuffle;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::NodeId;
use crate::dfs::DfsError;
use crate::streaming::{StreamingError, DEFAULT_WORKER_TIMEOUT};

pub use attempt::{
    run_map_attempt, run_reduce_attempt, AttemptContext, MapAttemptOutput, ReduceAttemptOutput, SpillSource,
};
pub use scheduler::{Engine, ProgressHook};
pub use shuffle::{fnv1a64, merge_sorted, partition, read_spill, sort_records, write_spill, MergeSorted};
pub use split::{plan_splits, read_split_lines};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 4;

/// Input-format identifiers accepted for text input.
pub const TEXT_INPUT_FORMATS: [&str; 2] = ["org.apache.hadoop.mapred.TextInputFormat", "text"];

/// One key/value pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Record {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

impl Record {
    pub fn new(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    pub fn from_counter(n: u64) -> Self {
        Self(format!("job_{n:06}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for JobId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<&str> for JobId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskKind {
    Map,
    Reduce,
}

impl TaskKind {
    pub fn as_env(self) -> &'static str {
        match self {
            TaskKind::Map => "map",
            TaskKind::Reduce => "reduce",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId {
    pub job: JobId,
    pub kind: TaskKind,
    pub index: usize,
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            TaskKind::Map => 'm',
            TaskKind::Reduce => 'r',
        };
        write!(f, "{}_{k}{:05}", self.job, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AttemptState {
    Running,
    Succeeded,
    Failed,
    Killed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAttempt {
    pub task: TaskId,
    pub attempt_no: u32,
    pub node: NodeId,
    pub state: AttemptState,
}

/// Byte range `[offset, offset + length)` of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSplit {
    pub path: String,
    pub offset: u64,
    pub length: u64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub input: String,
    pub output: String,
    #[serde(rename = "mapper_cmd")]
    pub mapper: String,
    /// Absent means a map-only job.
    #[serde(rename = "reducer_cmd", default, skip_serializing_if = "Option::is_none")]
    pub reducer: Option<String>,
    /// DFS paths shipped to every task's working directory.
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default = "default_input_format")]
    pub input_format: String,
    #[serde(default = "default_reducers")]
    pub num_reducers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_name: Option<String>,
}

fn default_input_format() -> String {
    TEXT_INPUT_FORMATS[0].to_owned()
}

fn default_reducers() -> usize {
    1
}

impl JobSpec {
    pub fn new(input: impl Into<String>, output: impl Into<String>, mapper: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
            mapper: mapper.into(),
            reducer: None,
            files: Vec::new(),
            input_format: default_input_format(),
            num_reducers: 1,
            job_name: None,
        }
    }

    pub fn reducer(mut self, cmd: impl Into<String>) -> Self {
        self.reducer = Some(cmd.into());
        self
    }

    pub fn file(mut self, path: impl Into<String>) -> Self {
        self.files.push(path.into());
        self
    }

    pub fn num_reducers(mut self, n: usize) -> Self {
        self.num_reducers = n;
        self
    }

    pub fn is_map_only(&self) -> bool {
        self.reducer.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobPhase {
    Pending,
    Mapping,
    Reducing,
    Succeeded,
    Failed,
}

impl JobPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobPhase::Succeeded | JobPhase::Failed)
    }
}

impl fmt::Display for JobPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JobPhase::Pending => "PENDING",
            JobPhase::Mapping => "MAPPING",
            JobPhase::Reducing => "REDUCING",
            JobPhase::Succeeded => "SUCCEEDED",
            JobPhase::Failed => "FAILED",
        };
        f.write_str(s)
    }
}

pub const COUNTER_RECORDS_IN: &str = "records_in";
pub const COUNTER_RECORDS_OUT: &str = "records_out";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: JobId,
    pub phase: JobPhase,
    pub map_done: usize,
    pub map_total: usize,
    pub reduce_done: usize,
    pub reduce_total: usize,
    pub counters: BTreeMap<String, u64>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Defaults to the file system block size.
    pub split_size: Option<u64>,
    pub max_attempts: u32,
    pub worker_timeout: Duration,
    /// Node-local scratch space: staged files and map spills.
    pub work_root: PathBuf,
    /// Randomizes task placement and completion delivery order.
    pub shuffle_seed: Option<u64>,
}

impl EngineConfig {
    pub fn new(work_root: impl Into<PathBuf>) -> Self {
        Self {
            split_size: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            worker_timeout: DEFAULT_WORKER_TIMEOUT,
            work_root: work_root.into(),
            shuffle_seed: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("input {0} not found")]
    InputNotFound(String),
    #[error("output {0} already exists")]
    OutputExists(String),
    #[error("unsupported input format {0:?}; only text input is accepted")]
    BadInputFormat(String),
    #[error("bad job spec: {0}")]
    BadSpec(String),
    #[error("no live nodes")]
    NoLiveNodes,
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("timed out waiting for {0}")]
    WaitTimeout(JobId),
    #[error("{0} already finished")]
    AlreadyTerminal(JobId),
    #[error(transparent)]
    Dfs(#[from] DfsError),
}

/// Why an attempt did not produce output.
#[derive(Debug, Error)]
pub enum AttemptError {
    #[error("worker failed: {0}")]
    WorkerFailed(String),
    #[error("cannot fetch output of map {map_index}: {reason}")]
    FetchFailed { map_index: usize, reason: String },
    #[error(transparent)]
    Streaming(#[from] StreamingError),
    #[error(transparent)]
    Dfs(#[from] DfsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl AttemptError {
    pub fn worker_exit(code: i32, stderr_tail: &[u8]) -> Self {
        let tail = String::from_utf8_lossy(stderr_tail);
        let tail = tail.trim_end();
        if tail.is_empty() {
            AttemptError::WorkerFailed(format!("exit code {code}"))
        } else {
            AttemptError::WorkerFailed(format!("exit code {code}: {tail}"))
        }
    }
}
