//! Node registry: heartbeats, failure detection and failure injection.
//!
//! Nodes only ever go from alive to dead. A machine that comes back
//! registers again and gets a fresh id.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;

pub const DEFAULT_HEARTBEAT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeState {
    Alive,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInfo {
    pub id: NodeId,
    pub state: NodeState,
    pub last_heartbeat: Duration,
    pub capacity: usize,
}

impl NodeInfo {
    pub fn is_alive(&self) -> bool {
        self.state == NodeState::Alive
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("node capacity must be at least 1")]
    ZeroCapacity,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} is already dead")]
    AlreadyDead(NodeId),
}

/// Called synchronously for every node that dies.
pub type DeathListener = Arc<dyn Fn(NodeId) + Send + Sync>;

pub struct Cluster {
    clock: Arc<dyn Clock>,
    timeout: Duration,
    nodes: Mutex<Registry>,
    // Held across marking a node dead and notifying listeners, so a return
    // from detect/inject means every downstream effect has happened.
    transitions: Mutex<()>,
    listeners: RwLock<Vec<DeathListener>>,
}

#[derive(Default)]
struct Registry {
    next_id: u32,
    nodes: BTreeMap<NodeId, NodeInfo>,
}

impl Cluster {
    pub fn new(clock: Arc<dyn Clock>, heartbeat_timeout: Duration) -> Self {
        Self {
            clock,
            timeout: heartbeat_timeout,
            nodes: Mutex::new(Registry {
                next_id: 1,
                ..Registry::default()
            }),
            transitions: Mutex::new(()),
            listeners: RwLock::new(Vec::new()),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn heartbeat_timeout(&self) -> Duration {
        self.timeout
    }

    pub fn on_node_death(&self, listener: DeathListener) {
        self.listeners.write().unwrap().push(listener);
    }

    pub fn register_node(&self, capacity: usize) -> Result<NodeId, ClusterError> {
        if capacity == 0 {
            return Err(ClusterError::ZeroCapacity);
        }
        let now = self.clock.now();
        let mut reg = self.nodes.lock().unwrap();
        let id = NodeId(reg.next_id);
        reg.next_id += 1;
        reg.nodes.insert(
            id,
            NodeInfo {
                id,
                state: NodeState::Alive,
                last_heartbeat: now,
                capacity,
            },
        );
        Ok(id)
    }

    /// Refreshes the node's heartbeat. Dead nodes stay dead.
    pub fn heartbeat(&self, node: NodeId) -> Result<(), ClusterError> {
        let now = self.clock.now();
        let mut reg = self.nodes.lock().unwrap();
        let info = reg
            .nodes
            .get_mut(&node)
            .ok_or(ClusterError::UnknownNode(node))?;
        info.last_heartbeat = info.last_heartbeat.max(now);
        Ok(())
    }

    /// Marks every alive node silent for longer than the timeout as dead and
    /// returns them in id order.
    pub fn detect_failures(&self, now: Duration) -> Vec<NodeId> {
        let _gate = self.transitions.lock().unwrap();
        let newly_dead: Vec<NodeId> = {
            let mut reg = self.nodes.lock().unwrap();
            reg.nodes
                .values_mut()
                .filter(|n| n.is_alive() && now.saturating_sub(n.last_heartbeat) > self.timeout)
                .map(|n| {
                    n.state = NodeState::Dead;
                    n.id
                })
                .collect()
        };
        for &node in &newly_dead {
            log::warn!("{node} missed heartbeats, marking dead");
            self.notify(node);
        }
        newly_dead
    }

    pub fn detect_failures_now(&self) -> Vec<NodeId> {
        self.detect_failures(self.clock.now())
    }

    pub fn inject_node_failure(&self, node: NodeId) -> Result<(), ClusterError> {
        let _gate = self.transitions.lock().unwrap();
        {
            let mut reg = self.nodes.lock().unwrap();
            let info = reg
                .nodes
                .get_mut(&node)
                .ok_or(ClusterError::UnknownNode(node))?;
            if !info.is_alive() {
                return Err(ClusterError::AlreadyDead(node));
            }
            info.state = NodeState::Dead;
        }
        log::warn!("injected failure on {node}");
        self.notify(node);
        Ok(())
    }

    fn notify(&self, node: NodeId) {
        let listeners = self.listeners.read().unwrap().clone();
        for listener in listeners {
            listener(node);
        }
    }

    pub fn list_nodes(&self) -> Vec<NodeInfo> {
        self.nodes.lock().unwrap().nodes.values().cloned().collect()
    }

    pub fn node(&self, id: NodeId) -> Option<NodeInfo> {
        self.nodes.lock().unwrap().nodes.get(&id).cloned()
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.node(id).is_some_and(|n| n.is_alive())
    }

    /// Alive node ids in ascending order.
    pub fn live_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .lock()
            .unwrap()
            .nodes
            .values()
            .filter(|n| n.is_alive())
            .map(|n| n.id)
            .collect()
    }
}

impl fmt::Debug for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cluster")
            .field("timeout", &self.timeout)
            .field("nodes", &self.list_nodes())
            .finish()
    }
}
