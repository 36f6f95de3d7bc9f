use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::BlockId;
use crate::cluster::NodeId;

/// Replica storage, addressed by (holder, block).
pub trait BlockStore: Send + Sync {
    fn write(&self, node: NodeId, block: BlockId, data: &[u8]) -> io::Result<()>;
    fn read(&self, node: NodeId, block: BlockId) -> io::Result<Vec<u8>>;
    fn remove(&self, node: NodeId, block: BlockId) -> io::Result<()>;
}

#[derive(Default)]
pub struct MemoryStore {
    blocks: Mutex<HashMap<(NodeId, BlockId), Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn replica_count(&self) -> usize {
        self.blocks.lock().unwrap().len()
    }
}

impl BlockStore for MemoryStore {
    fn write(&self, node: NodeId, block: BlockId, data: &[u8]) -> io::Result<()> {
        self.blocks
            .lock()
            .unwrap()
            .insert((node, block), data.to_vec());
        Ok(())
    }

    fn read(&self, node: NodeId, block: BlockId) -> io::Result<Vec<u8>> {
        self.blocks
            .lock()
            .unwrap()
            .get(&(node, block))
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{block} on {node}")))
    }

    fn remove(&self, node: NodeId, block: BlockId) -> io::Result<()> {
        self.blocks.lock().unwrap().remove(&(node, block));
        Ok(())
    }
}

/// One directory per holder (`node-<id>`), one file per block named by the
/// decimal block id.
pub struct DiskStore {
    root: PathBuf,
}

impl DiskStore {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn block_path(&self, node: NodeId, block: BlockId) -> PathBuf {
        self.root
            .join(format!("node-{}", node.0))
            .join(block.0.to_string())
    }
}

impl BlockStore for DiskStore {
    fn write(&self, node: NodeId, block: BlockId, data: &[u8]) -> io::Result<()> {
        let path = self.block_path(node, block);
        let dir = path.parent().expect("block path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.tmp", block.0));
        fs::write(&tmp, data)?;
        fs::rename(&tmp, &path)
    }

    fn read(&self, node: NodeId, block: BlockId) -> io::Result<Vec<u8>> {
        fs::read(self.block_path(node, block))
    }

    fn remove(&self, node: NodeId, block: BlockId) -> io::Result<()> {
        match fs::remove_file(self.block_path(node, block)) {
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_layout_is_node_dir_and_decimal_id() {
        let dir = tempfile::tempdir().unwrap();
        let store = DiskStore::new(dir.path()).unwrap();
        store.write(NodeId(3), BlockId(17), b"abc").unwrap();
        assert_eq!(fs::read(dir.path().join("node-3").join("17")).unwrap(), b"abc");
        assert_eq!(store.read(NodeId(3), BlockId(17)).unwrap(), b"abc");
        store.remove(NodeId(3), BlockId(17)).unwrap();
        store.remove(NodeId(3), BlockId(17)).unwrap();
        assert!(store.read(NodeId(3), BlockId(17)).is_err());
    }
}
