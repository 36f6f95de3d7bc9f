//! The daemon: one file system, one cluster and one engine behind a TCP
//! socket speaking newline-delimited JSON.
//!
//! Simulated nodes live inside the daemon process. A background thread
//! heartbeats every registered node and runs failure detection, so a node
//! only dies when a test injects it.

pub mod client;
pub mod protocol;
pub mod server;

use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::SystemClock;
use crate::cluster::{Cluster, ClusterError, NodeId};
use crate::config::Config;
use crate::dfs::{Dfs, DfsError, DiskStore};
use crate::engine::Engine;

pub use client::{Client, ClientError};
pub use protocol::{ErrorCode, LsEntry, Request, WireError};
pub use server::Server;

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("data directory {path}: {source}")]
    DataDir { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Dfs(#[from] DfsError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

pub struct Daemon {
    dfs: Arc<Dfs>,
    cluster: Arc<Cluster>,
    engine: Engine,
    stop: Option<mpsc::Sender<()>>,
    heartbeats: Option<JoinHandle<()>>,
}

impl Daemon {
    pub fn start(config: &Config) -> Result<Self, DaemonError> {
        let data = &config.jobd.data_dir;
        let mkdir = |p: PathBuf| {
            fs::create_dir_all(&p).map_err(|source| DaemonError::DataDir { path: p, source })
        };
        mkdir(data.join("blocks"))?;
        mkdir(data.join("work"))?;

        let cluster = Arc::new(Cluster::new(Arc::new(SystemClock::new()), config.heartbeat_timeout()));
        for _ in 0..config.cluster.nodes {
            cluster.register_node(config.cluster.capacity)?;
        }
        let store = DiskStore::new(data.join("blocks")).map_err(|source| DaemonError::DataDir {
            path: data.join("blocks"),
            source,
        })?;
        let dfs = Arc::new(Dfs::with_image(
            config.dfs_config(),
            cluster.clone(),
            Arc::new(store),
            data.join("namespace.json"),
        )?);
        dfs.repair_on_node_death();
        let engine = Engine::start(dfs.clone(), config.engine_config());

        let (stop, stopped) = mpsc::channel::<()>();
        let heartbeats = {
            let cluster = cluster.clone();
            let period = (config.heartbeat_timeout() / 4).max(Duration::from_millis(10));
            thread::Builder::new()
                .name("mrs-heartbeat".into())
                .spawn(move || loop {
                    for node in cluster.live_nodes() {
                        let _ = cluster.heartbeat(node);
                    }
                    cluster.detect_failures_now();
                    if stopped.recv_timeout(period) != Err(RecvTimeoutError::Timeout) {
                        return;
                    }
                })
                .expect("spawn heartbeat thread")
        };
        log::info!(
            "daemon up: {} nodes x {} slots, data in {}",
            config.cluster.nodes,
            config.cluster.capacity,
            data.display()
        );
        Ok(Self {
            dfs,
            cluster,
            engine,
            stop: Some(stop),
            heartbeats: Some(heartbeats),
        })
    }

    pub fn dfs(&self) -> &Arc<Dfs> {
        &self.dfs
    }

    pub fn cluster(&self) -> &Arc<Cluster> {
        &self.cluster
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn fail_node(&self, node: NodeId) -> Result<(), ClusterError> {
        self.cluster.inject_node_failure(node)
    }

    /// Executes one request; the returned value is the full response object.
    pub fn handle(&self, request: Request) -> Value {
        match self.dispatch(request) {
            Ok(body) => protocol::ok_response(body),
            Err(e) => protocol::error_response(&e),
        }
    }

    fn dispatch(&self, request: Request) -> Result<Value, WireError> {
        Ok(match request {
            Request::Put { path, data } => {
                let bytes = protocol::decode_data(&data)?;
                let meta = self.dfs.put(&path, &bytes)?;
                json!({"path": meta.path, "length": meta.length})
            }
            Request::Get { path } => json!({"data": protocol::encode_data(&self.dfs.get(&path)?)}),
            Request::Ls { prefix } => {
                let files: Vec<LsEntry> = self
                    .dfs
                    .ls(&prefix)
                    .into_iter()
                    .map(|f| LsEntry {
                        path: f.path,
                        length: f.length,
                    })
                    .collect();
                json!({ "files": files })
            }
            Request::Rename { src, dst } => {
                self.dfs.rename(&src, &dst)?;
                json!({})
            }
            Request::Delete { path } => {
                self.dfs.delete(&path)?;
                json!({})
            }
            Request::Submit(spec) => json!({"job": self.engine.submit(spec)?}),
            Request::Status { job } => json!({"status": self.engine.status(&job)?}),
            Request::Wait { job, timeout_ms } => {
                let timeout = timeout_ms.map_or(Duration::MAX, Duration::from_millis);
                json!({"status": self.engine.wait(&job, timeout)?})
            }
            Request::Kill { job } => {
                self.engine.kill(&job)?;
                json!({})
            }
        })
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        drop(self.stop.take());
        if let Some(h) = self.heartbeats.take() {
            let _ = h.join();
        }
    }
}
