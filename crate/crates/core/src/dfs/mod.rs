//! Append-only replicated block file system.
//!
//! A single coordinator owns the namespace (a flat map from absolute path to
//! [`FileMeta`]); block replicas live on cluster nodes behind a
//! [`BlockStore`]. Every namespace mutation happens under one lock, so each
//! operation is atomic and linearizable. Replica I/O for puts and appends
//! runs outside the lock while the path is reserved; the file becomes
//! visible only once all its blocks are written.
//!
//! Sealed blocks are never modified. Appending to a file whose last block is
//! partial writes a fresh block holding the old tail plus new bytes and swaps
//! it in.

mod reader;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Cluster, NodeId};

pub use reader::DfsReader;
pub use store::{BlockStore, DiskStore, MemoryStore};

pub const DEFAULT_BLOCK_SIZE: u64 = 1024 * 1024;
pub const DEFAULT_REPLICATION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "blk_{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub id: BlockId,
    pub length: u64,
    pub locations: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub path: String,
    pub blocks: Vec<BlockMeta>,
    pub length: u64,
}

impl FileMeta {
    /// Block index and offset within it for a file offset.
    pub fn locate(&self, offset: u64) -> Option<(usize, u64)> {
        let mut start = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            if offset < start + b.length {
                return Some((i, offset - start));
            }
            start += b.length;
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DfsConfig {
    pub block_size: u64,
    pub replication: usize,
    pub placement_seed: u64,
}

impl Default for DfsConfig {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            replication: DEFAULT_REPLICATION,
            placement_seed: 0x5eed,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DfsError {
    #[error("{0}: no such file")]
    NotFound(String),
    #[error("{0}: already exists")]
    AlreadyExists(String),
    #[error("{path}: conflicts with existing file {existing}")]
    PathConflict { path: String, existing: String },
    #[error("invalid path {0:?}")]
    InvalidPath(String),
    #[error("need {needed} live nodes, have {live}")]
    InsufficientNodes { needed: usize, live: usize },
    #[error("{path}: {block} has no live replica")]
    BlockUnavailable { path: String, block: BlockId },
    #[error("i/o: {0}")]
    Io(String),
}

/// Outcome of re-replicating after a node loss.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepairReport {
    pub repaired: usize,
    pub irreparable: Vec<BlockId>,
}

pub struct Dfs {
    config: DfsConfig,
    cluster: Arc<Cluster>,
    store: Arc<dyn BlockStore>,
    ns: Mutex<Namespace>,
    idle: Condvar,
    image: Option<PathBuf>,
}

struct Namespace {
    files: BTreeMap<String, FileMeta>,
    busy: HashSet<String>,
    next_block: u64,
    rng: StdRng,
}

#[derive(Serialize, Deserialize)]
struct Image {
    next_block: u64,
    files: Vec<FileMeta>,
}

impl Dfs {
    pub fn new(config: DfsConfig, cluster: Arc<Cluster>, store: Arc<dyn BlockStore>) -> Self {
        assert!(config.block_size >= 1, "block size must be positive");
        assert!(config.replication >= 1, "replication must be positive");
        Self {
            config,
            cluster,
            store,
            ns: Mutex::new(Namespace {
                files: BTreeMap::new(),
                busy: HashSet::new(),
                next_block: 1,
                rng: StdRng::seed_from_u64(config.placement_seed),
            }),
            idle: Condvar::new(),
            image: None,
        }
    }

    /// Like [`Dfs::new`], but the namespace is loaded from and saved to
    /// `image` so file contents survive a restart over the same store.
    pub fn with_image(
        config: DfsConfig,
        cluster: Arc<Cluster>,
        store: Arc<dyn BlockStore>,
        image: impl Into<PathBuf>,
    ) -> Result<Self, DfsError> {
        let image = image.into();
        let mut dfs = Self::new(config, cluster, store);
        match fs::read(&image) {
            Ok(bytes) => {
                let loaded: Image = serde_json::from_slice(&bytes)
                    .map_err(|e| DfsError::Io(format!("{}: {e}", image.display())))?;
                let ns = dfs.ns.get_mut().unwrap();
                ns.next_block = loaded.next_block;
                ns.files = loaded
                    .files
                    .into_iter()
                    .map(|f| (f.path.clone(), f))
                    .collect();
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(DfsError::Io(format!("{}: {e}", image.display()))),
        }
        dfs.image = Some(image);
        Ok(dfs)
    }

    pub fn config(&self) -> DfsConfig {
        self.config
    }

    pub fn cluster(&self) -> &Arc<Cluster> {
        &self.cluster
    }

    /// Runs [`Dfs::replicate_repair`] whenever the cluster declares a node dead.
    /// Register this before any listener that reads from the file system.
    pub fn repair_on_node_death(self: &Arc<Self>) {
        let weak = Arc::downgrade(self);
        self.cluster.on_node_death(Arc::new(move |node| {
            if let Some(dfs) = weak.upgrade() {
                let report = dfs.replicate_repair(node);
                log::info!(
                    "{node} died: {} blocks re-replicated, {} irreparable",
                    report.repaired,
                    report.irreparable.len()
                );
            }
        }));
    }

    /// Stores `content` as a new file.
    pub fn put(&self, path: &str, content: &[u8]) -> Result<FileMeta, DfsError> {
        validate_path(path)?;
        let planned = {
            let mut ns = self.wait_idle(&[path]);
            if ns.files.contains_key(path) {
                return Err(DfsError::AlreadyExists(path.to_owned()));
            }
            check_conflicts(&ns, path, None)?;
            let live = self.require_live()?;
            let planned: Vec<(BlockMeta, &[u8])> = chunks(content, self.config.block_size)
                .map(|chunk| (self.plan_block(&mut ns, &live, chunk.len() as u64), chunk))
                .collect();
            ns.busy.insert(path.to_owned());
            planned
        };

        let written = self.write_replicas(&planned);
        let mut ns = self.ns.lock().unwrap();
        ns.busy.remove(path);
        self.idle.notify_all();
        if let Err(e) = written {
            self.discard(&planned);
            return Err(e);
        }
        if let Err(e) = check_conflicts(&ns, path, None) {
            drop(ns);
            self.discard(&planned);
            return Err(e);
        }
        let mut planned = planned;
        self.settle_locations(&mut ns, &mut planned);
        let meta = FileMeta {
            path: path.to_owned(),
            length: content.len() as u64,
            blocks: planned.into_iter().map(|(b, _)| b).collect(),
        };
        ns.files.insert(path.to_owned(), meta.clone());
        self.save(&ns)?;
        Ok(meta)
    }

    pub fn get(&self, path: &str) -> Result<Vec<u8>, DfsError> {
        let meta = self.stat(path)?;
        let mut out = Vec::with_capacity(meta.length as usize);
        for block in &meta.blocks {
            out.extend_from_slice(&self.read_block(&meta.path, block)?);
        }
        Ok(out)
    }

    /// Bytes `[offset, offset + len)` of the file, clipped at its end.
    pub fn read_range(&self, path: &str, offset: u64, len: u64) -> Result<Vec<u8>, DfsError> {
        let meta = self.stat(path)?;
        let end = offset.saturating_add(len).min(meta.length);
        let mut out = Vec::new();
        let mut start = 0u64;
        for block in &meta.blocks {
            let block_end = start + block.length;
            if block_end > offset && start < end {
                let data = self.read_block(&meta.path, block)?;
                let from = offset.saturating_sub(start) as usize;
                let to = (end - start).min(block.length) as usize;
                out.extend_from_slice(&data[from..to]);
            }
            start = block_end;
            if start >= end {
                break;
            }
        }
        Ok(out)
    }

    /// Sequential reader over a snapshot of the file's block list.
    pub fn open(&self, path: &str) -> Result<DfsReader<'_>, DfsError> {
        Ok(DfsReader::new(self, self.stat(path)?))
    }

    pub fn append(&self, path: &str, suffix: &[u8]) -> Result<FileMeta, DfsError> {
        validate_path(path)?;
        let (old_tail, planned, head_len) = {
            let mut ns = self.wait_idle(&[path]);
            let meta = ns
                .files
                .get(path)
                .cloned()
                .ok_or_else(|| DfsError::NotFound(path.to_owned()))?;
            if suffix.is_empty() {
                return Ok(meta);
            }
            let live = self.require_live()?;
            ns.busy.insert(path.to_owned());
            drop(ns);

            let bs = self.config.block_size;
            let partial = meta.blocks.last().filter(|b| b.length < bs).cloned();
            let mut planned_data: Vec<Vec<u8>> = Vec::new();
            let rest = match &partial {
                Some(tail) => {
                    let data = match self.read_block(path, tail) {
                        Ok(d) => d,
                        Err(e) => {
                            self.release(path);
                            return Err(e);
                        }
                    };
                    let fill = ((bs - tail.length) as usize).min(suffix.len());
                    let mut merged = data;
                    merged.extend_from_slice(&suffix[..fill]);
                    planned_data.push(merged);
                    &suffix[fill..]
                }
                None => suffix,
            };
            planned_data.extend(chunks(rest, bs).map(<[u8]>::to_vec));

            let mut ns = self.ns.lock().unwrap();
            let planned: Vec<(BlockMeta, Vec<u8>)> = planned_data
                .into_iter()
                .map(|d| (self.plan_block(&mut ns, &live, d.len() as u64), d))
                .collect();
            let head_len = meta.blocks.len() - usize::from(partial.is_some());
            (partial, planned, head_len)
        };

        let borrowed: Vec<(BlockMeta, &[u8])> =
            planned.iter().map(|(b, d)| (b.clone(), d.as_slice())).collect();
        let written = self.write_replicas(&borrowed);
        let mut ns = self.ns.lock().unwrap();
        ns.busy.remove(path);
        self.idle.notify_all();
        if let Err(e) = written {
            drop(ns);
            self.discard(&borrowed);
            return Err(e);
        }
        let mut settled = borrowed;
        self.settle_locations(&mut ns, &mut settled);
        let settled: Vec<BlockMeta> = settled.into_iter().map(|(b, _)| b).collect();
        let meta = ns.files.get_mut(path).expect("reserved path stays present");
        meta.blocks.truncate(head_len);
        meta.blocks.extend(settled);
        meta.length += suffix.len() as u64;
        let meta = meta.clone();
        self.save(&ns)?;
        drop(ns);

        if let Some(tail) = old_tail {
            self.remove_replicas(&tail);
        }
        Ok(meta)
    }

    /// Moves a file to a new path. Only metadata changes.
    pub fn rename(&self, src: &str, dst: &str) -> Result<(), DfsError> {
        validate_path(src)?;
        validate_path(dst)?;
        let mut ns = self.wait_idle(&[src, dst]);
        if !ns.files.contains_key(src) {
            return Err(DfsError::NotFound(src.to_owned()));
        }
        if src == dst || ns.files.contains_key(dst) {
            return Err(DfsError::AlreadyExists(dst.to_owned()));
        }
        check_conflicts(&ns, dst, Some(src))?;
        let mut meta = ns.files.remove(src).expect("checked above");
        meta.path = dst.to_owned();
        ns.files.insert(dst.to_owned(), meta);
        self.save(&ns)
    }

    /// Files whose path starts with `prefix`, in byte order.
    pub fn ls(&self, prefix: &str) -> Vec<FileMeta> {
        let ns = self.ns.lock().unwrap();
        ns.files
            .range(prefix.to_owned()..)
            .take_while(|(p, _)| p.starts_with(prefix))
            .map(|(_, m)| m.clone())
            .collect()
    }

    pub fn delete(&self, path: &str) -> Result<(), DfsError> {
        validate_path(path)?;
        let meta = {
            let mut ns = self.wait_idle(&[path]);
            let meta = ns
                .files
                .remove(path)
                .ok_or_else(|| DfsError::NotFound(path.to_owned()))?;
            self.save(&ns)?;
            meta
        };
        for block in &meta.blocks {
            self.remove_replicas(block);
        }
        Ok(())
    }

    pub fn stat(&self, path: &str) -> Result<FileMeta, DfsError> {
        self.ns
            .lock()
            .unwrap()
            .files
            .get(path)
            .cloned()
            .ok_or_else(|| DfsError::NotFound(path.to_owned()))
    }

    pub fn exists(&self, path: &str) -> bool {
        self.ns.lock().unwrap().files.contains_key(path)
    }

    /// Drops every location on dead nodes and copies each under-replicated
    /// block to fresh live nodes until it has `min(replication, live)`
    /// replicas. Blocks left with no replica at all are reported, not fixed.
    pub fn replicate_repair(&self, failed: NodeId) -> RepairReport {
        let mut ns = self.ns.lock().unwrap();
        let live = self.cluster.live_nodes();
        let target = self.config.replication.min(live.len());
        let mut report = RepairReport::default();
        let paths: Vec<String> = ns.files.keys().cloned().collect();
        for path in paths {
            let block_count = ns.files[&path].blocks.len();
            for i in 0..block_count {
                let mut block = ns.files[&path].blocks[i].clone();
                let had_failed = block.locations.contains(&failed);
                let before = block.locations.len();
                block.locations.retain(|n| live.contains(n));
                if block.locations.len() == before && !had_failed {
                    continue;
                }
                if block.locations.is_empty() {
                    log::error!("{path}: {} lost its last replica", block.id);
                    report.irreparable.push(block.id);
                } else if block.locations.len() < target {
                    let grown = self.top_up(&mut ns, &path, &mut block, &live, target, None);
                    if grown {
                        report.repaired += 1;
                    }
                }
                ns.files.get_mut(&path).unwrap().blocks[i] = block;
            }
        }
        if let Err(e) = self.save(&ns) {
            log::error!("saving namespace after repair: {e}");
        }
        report
    }

    fn read_block(&self, path: &str, block: &BlockMeta) -> Result<Vec<u8>, DfsError> {
        if block.length == 0 {
            return Ok(Vec::new());
        }
        for &node in &block.locations {
            if !self.cluster.is_alive(node) {
                continue;
            }
            match self.store.read(node, block.id) {
                Ok(data) if data.len() as u64 == block.length => return Ok(data),
                Ok(data) => log::warn!(
                    "{} on {node}: expected {} bytes, found {}",
                    block.id,
                    block.length,
                    data.len()
                ),
                Err(e) => log::warn!("{} on {node}: {e}", block.id),
            }
        }
        Err(DfsError::BlockUnavailable {
            path: path.to_owned(),
            block: block.id,
        })
    }

    fn wait_idle(&self, paths: &[&str]) -> MutexGuard<'_, Namespace> {
        let mut ns = self.ns.lock().unwrap();
        while paths.iter().any(|p| ns.busy.contains(*p)) {
            ns = self.idle.wait(ns).unwrap();
        }
        ns
    }

    fn release(&self, path: &str) {
        self.ns.lock().unwrap().busy.remove(path);
        self.idle.notify_all();
    }

    fn require_live(&self) -> Result<Vec<NodeId>, DfsError> {
        let live = self.cluster.live_nodes();
        if live.len() < self.config.replication {
            return Err(DfsError::InsufficientNodes {
                needed: self.config.replication,
                live: live.len(),
            });
        }
        Ok(live)
    }

    fn plan_block(&self, ns: &mut Namespace, live: &[NodeId], length: u64) -> BlockMeta {
        let id = BlockId(ns.next_block);
        ns.next_block += 1;
        let locations = live
            .choose_multiple(&mut ns.rng, self.config.replication)
            .copied()
            .collect();
        BlockMeta {
            id,
            length,
            locations,
        }
    }

    fn write_replicas(&self, planned: &[(BlockMeta, &[u8])]) -> Result<(), DfsError> {
        for (block, data) in planned {
            for &node in &block.locations {
                self.store
                    .write(node, block.id, data)
                    .map_err(|e| DfsError::Io(format!("writing {} to {node}: {e}", block.id)))?;
            }
        }
        Ok(())
    }

    fn discard(&self, planned: &[(BlockMeta, &[u8])]) {
        for (block, _) in planned {
            self.remove_replicas(block);
        }
    }

    fn remove_replicas(&self, block: &BlockMeta) {
        for &node in &block.locations {
            if let Err(e) = self.store.remove(node, block.id) {
                log::debug!("removing {} from {node}: {e}", block.id);
            }
        }
    }

    /// Nodes may have died while replicas were being written outside the
    /// lock; prune them and top up from the data in hand.
    fn settle_locations(&self, ns: &mut Namespace, planned: &mut [(BlockMeta, &[u8])]) {
        let live = self.cluster.live_nodes();
        let target = self.config.replication.min(live.len());
        for (block, data) in planned.iter_mut() {
            block.locations.retain(|n| live.contains(n));
            if block.locations.len() < target {
                self.top_up(ns, "", block, &live, target, Some(data));
            }
        }
    }

    fn top_up(
        &self,
        ns: &mut Namespace,
        path: &str,
        block: &mut BlockMeta,
        live: &[NodeId],
        target: usize,
        data: Option<&[u8]>,
    ) -> bool {
        let owned;
        let data = match data {
            Some(d) => d,
            None => match self.read_block(path, block) {
                Ok(d) => {
                    owned = d;
                    &owned
                }
                Err(e) => {
                    log::error!("cannot re-replicate: {e}");
                    return false;
                }
            },
        };
        let candidates: Vec<NodeId> = live
            .iter()
            .copied()
            .filter(|n| !block.locations.contains(n))
            .collect();
        let wanted = target.saturating_sub(block.locations.len());
        let mut grown = false;
        for node in candidates.choose_multiple(&mut ns.rng, wanted).copied().collect::<Vec<_>>() {
            match self.store.write(node, block.id, data) {
                Ok(()) => {
                    block.locations.insert(node);
                    grown = true;
                }
                Err(e) => log::error!("copying {} to {node}: {e}", block.id),
            }
        }
        grown
    }

    fn save(&self, ns: &Namespace) -> Result<(), DfsError> {
        let Some(image) = &self.image else {
            return Ok(());
        };
        let snapshot = Image {
            next_block: ns.next_block,
            files: ns.files.values().cloned().collect(),
        };
        let bytes = serde_json::to_vec(&snapshot).map_err(|e| DfsError::Io(e.to_string()))?;
        let tmp = image.with_extension("tmp");
        fs::write(&tmp, bytes)
            .and_then(|()| fs::rename(&tmp, image))
            .map_err(|e| DfsError::Io(format!("{}: {e}", image.display())))
    }
}

impl fmt::Debug for Dfs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dfs").field("config", &self.config).finish()
    }
}

fn chunks(content: &[u8], block_size: u64) -> impl Iterator<Item = &[u8]> {
    content.chunks(block_size.min(usize::MAX as u64) as usize)
}

/// Absolute, slash separated, no empty, `.` or `..` components, no trailing
/// slash, no newline or NUL.
pub fn validate_path(path: &str) -> Result<(), DfsError> {
    let bad = || DfsError::InvalidPath(path.to_owned());
    let rest = path.strip_prefix('/').ok_or_else(bad)?;
    if rest.is_empty() || path.contains(['\n', '\0']) {
        return Err(bad());
    }
    if rest.split('/').any(|c| c.is_empty() || c == "." || c == "..") {
        return Err(bad());
    }
    Ok(())
}

/// A file may not sit at a path that is a directory prefix of another file,
/// or below one.
fn check_conflicts(ns: &Namespace, path: &str, ignore: Option<&str>) -> Result<(), DfsError> {
    let below = format!("{path}/");
    if let Some((existing, _)) = ns
        .files
        .range(below.clone()..)
        .take_while(|(p, _)| p.starts_with(&below))
        .find(|(p, _)| Some(p.as_str()) != ignore)
    {
        return Err(DfsError::PathConflict {
            path: path.to_owned(),
            existing: existing.clone(),
        });
    }
    for (i, _) in path.match_indices('/').skip(1) {
        let ancestor = &path[..i];
        if ns.files.contains_key(ancestor) && Some(ancestor) != ignore {
            return Err(DfsError::PathConflict {
                path: path.to_owned(),
                existing: ancestor.to_owned(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
