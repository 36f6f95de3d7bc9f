use std::io::{self, BufReader};
use std::net::{Shutdown, TcpStream};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use thiserror::Error;

use super::protocol::{self, LsEntry, Request, WireError};
use crate::engine::{JobId, JobSpec, JobStatus};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach daemon at {addr}: {source}")]
    Transport { addr: String, source: io::Error },
    #[error("malformed response from daemon: {0}")]
    Protocol(String),
    #[error("{0}")]
    Daemon(WireError),
}

impl ClientError {
    /// The daemon answered, but with an error.
    pub fn is_daemon_error(&self) -> bool {
        matches!(self, ClientError::Daemon(_))
    }
}

/// Blocking client: one TCP connection per call.
#[derive(Debug, Clone)]
pub struct Client {
    addr: String,
}

impl Client {
    pub fn new(addr: impl Into<String>) -> Self {
        Self { addr: addr.into() }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn call(&self, request: &Request) -> Result<Map<String, Value>, ClientError> {
        let transport = |source| ClientError::Transport {
            addr: self.addr.clone(),
            source,
        };
        let stream = TcpStream::connect(&self.addr).map_err(transport)?;
        let mut writer = stream.try_clone().map_err(transport)?;
        protocol::write_frame(&mut writer, request).map_err(transport)?;
        writer.shutdown(Shutdown::Write).map_err(transport)?;
        let frame = protocol::read_frame(&mut BufReader::new(stream))
            .map_err(transport)?
            .ok_or_else(|| ClientError::Protocol("connection closed without a response".into()))?;
        let value: Value = serde_json::from_slice(&frame).map_err(|e| ClientError::Protocol(e.to_string()))?;
        protocol::parse_response(value)
            .map_err(ClientError::Protocol)?
            .map_err(ClientError::Daemon)
    }

    pub fn put(&self, path: &str, data: &[u8]) -> Result<u64, ClientError> {
        let body = self.call(&Request::Put {
            path: path.into(),
            data: protocol::encode_data(data),
        })?;
        field(body, "length")
    }

    pub fn get(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        let data: String = field(self.call(&Request::Get { path: path.into() })?, "data")?;
        protocol::decode_data(&data).map_err(|e| ClientError::Protocol(e.message))
    }

    pub fn ls(&self, prefix: &str) -> Result<Vec<LsEntry>, ClientError> {
        field(self.call(&Request::Ls { prefix: prefix.into() })?, "files")
    }

    pub fn rename(&self, src: &str, dst: &str) -> Result<(), ClientError> {
        self.call(&Request::Rename {
            src: src.into(),
            dst: dst.into(),
        })
        .map(drop)
    }

    pub fn delete(&self, path: &str) -> Result<(), ClientError> {
        self.call(&Request::Delete { path: path.into() }).map(drop)
    }

    pub fn submit(&self, spec: &JobSpec) -> Result<JobId, ClientError> {
        field(self.call(&Request::Submit(spec.clone()))?, "job")
    }

    pub fn status(&self, job: &JobId) -> Result<JobStatus, ClientError> {
        field(self.call(&Request::Status { job: job.clone() })?, "status")
    }

    /// `None` waits without limit.
    pub fn wait(&self, job: &JobId, timeout: Option<Duration>) -> Result<JobStatus, ClientError> {
        let timeout_ms = timeout.map(|t| u64::try_from(t.as_millis()).unwrap_or(u64::MAX));
        field(
            self.call(&Request::Wait {
                job: job.clone(),
                timeout_ms,
            })?,
            "status",
        )
    }

    pub fn kill(&self, job: &JobId) -> Result<(), ClientError> {
        self.call(&Request::Kill { job: job.clone() }).map(drop)
    }
}

fn field<T: DeserializeOwned>(mut body: Map<String, Value>, name: &str) -> Result<T, ClientError> {
    let v = body
        .remove(name)
        .ok_or_else(|| ClientError::Protocol(format!("response lacks {name:?}")))?;
    serde_json::from_value(v).map_err(|e| ClientError::Protocol(format!("{name}: {e}")))
}
