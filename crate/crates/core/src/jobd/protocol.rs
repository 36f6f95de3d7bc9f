//! Wire types and framing. One request line in, one response line out,
//! then the connection closes. See `protocol.md` at the repository root.

use std::fmt;
use std::io::{self, BufRead, Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dfs::DfsError;
use crate::engine::{EngineError, JobId, JobSpec};

/// Largest accepted frame, newline included.
pub const MAX_FRAME: usize = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Put {
        path: String,
        /// Base64, standard alphabet, padded.
        data: String,
    },
    Get {
        path: String,
    },
    Ls {
        #[serde(default = "root_prefix")]
        prefix: String,
    },
    Rename {
        src: String,
        dst: String,
    },
    Delete {
        path: String,
    },
    Submit(JobSpec),
    Status {
        job: JobId,
    },
    Wait {
        job: JobId,
        /// Absent means no limit.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
    },
    Kill {
        job: JobId,
    },
}

fn root_prefix() -> String {
    "/".to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    NotFound,
    AlreadyExists,
    BadRequest,
    NoLiveNodes,
    UnknownJob,
    WaitTimeout,
    Terminal,
    /// Too few live replicas or nodes to serve the request right now.
    Unavailable,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::AlreadyExists => "ALREADY_EXISTS",
            ErrorCode::BadRequest => "BAD_REQUEST",
            ErrorCode::NoLiveNodes => "NO_LIVE_NODES",
            ErrorCode::UnknownJob => "UNKNOWN_JOB",
            ErrorCode::WaitTimeout => "WAIT_TIMEOUT",
            ErrorCode::Terminal => "TERMINAL",
            ErrorCode::Unavailable => "UNAVAILABLE",
            ErrorCode::Internal => "INTERNAL",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A failed request as it travels on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
}

impl WireError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl From<DfsError> for WireError {
    fn from(e: DfsError) -> Self {
        let code = match &e {
            DfsError::NotFound(_) => ErrorCode::NotFound,
            DfsError::AlreadyExists(_) | DfsError::PathConflict { .. } => ErrorCode::AlreadyExists,
            DfsError::InvalidPath(_) => ErrorCode::BadRequest,
            DfsError::InsufficientNodes { live: 0, .. } => ErrorCode::NoLiveNodes,
            DfsError::InsufficientNodes { .. } | DfsError::BlockUnavailable { .. } => ErrorCode::Unavailable,
            DfsError::Io(_) => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<EngineError> for WireError {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Dfs(inner) => return inner.into(),
            EngineError::InputNotFound(_) => ErrorCode::NotFound,
            EngineError::OutputExists(_) => ErrorCode::AlreadyExists,
            EngineError::BadInputFormat(_) | EngineError::BadSpec(_) => ErrorCode::BadRequest,
            EngineError::NoLiveNodes => ErrorCode::NoLiveNodes,
            EngineError::UnknownJob(_) => ErrorCode::UnknownJob,
            EngineError::WaitTimeout(_) => ErrorCode::WaitTimeout,
            EngineError::AlreadyTerminal(_) => ErrorCode::Terminal,
        };
        Self::new(code, e.to_string())
    }
}

/// One `ls` result row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LsEntry {
    pub path: String,
    pub length: u64,
}

pub fn encode_data(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_data(text: &str) -> Result<Vec<u8>, WireError> {
    STANDARD
        .decode(text)
        .map_err(|e| WireError::bad_request(format!("data is not valid base64: {e}")))
}

/// `{"ok":true}` merged with the fields of `body`, which must be an object.
pub fn ok_response(body: Value) -> Value {
    let mut map = Map::new();
    map.insert("ok".into(), Value::Bool(true));
    if let Value::Object(fields) = body {
        map.extend(fields);
    }
    Value::Object(map)
}

pub fn error_response(e: &WireError) -> Value {
    json!({"ok": false, "error": e.code.as_str(), "message": e.message})
}

/// Splits a decoded response into its body or the daemon's error.
pub fn parse_response(value: Value) -> Result<Result<Map<String, Value>, WireError>, String> {
    let Value::Object(mut map) = value else {
        return Err("response is not a JSON object".into());
    };
    match map.remove("ok") {
        Some(Value::Bool(true)) => Ok(Ok(map)),
        Some(Value::Bool(false)) => {
            let code: ErrorCode = map
                .remove("error")
                .ok_or("error response without \"error\"")
                .and_then(|v| serde_json::from_value(v).map_err(|_| "unknown error code"))?;
            let message = match map.remove("message") {
                Some(Value::String(s)) => s,
                _ => String::new(),
            };
            Ok(Err(WireError::new(code, message)))
        }
        _ => Err("response lacks a boolean \"ok\"".into()),
    }
}

/// Reads one `\n`-terminated frame. `Ok(None)` on a clean EOF before any byte.
pub fn read_frame<R: BufRead>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut buf = Vec::new();
    let n = reader.by_ref().take(MAX_FRAME as u64).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        let why = if n >= MAX_FRAME { "frame too large" } else { "frame not newline-terminated" };
        return Err(io::Error::new(io::ErrorKind::InvalidData, why));
    }
    buf.pop();
    Ok(Some(buf))
}

/// Writes `value` as compact JSON followed by `\n`. Compact JSON never
/// contains a raw newline, so the frame boundary is unambiguous.
pub fn write_frame<W: Write>(writer: &mut W, value: &impl Serialize) -> io::Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    writer.write_all(&line)?;
    writer.flush()
}
