//! Distributed cache: per-(job, node) staging of shipped files.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StreamingError;
use crate::cluster::NodeId;
use crate::engine::JobId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub source_path: String,
    pub staged_name: String,
}

impl CacheEntry {
    /// Entry staged under the base name of `source_path`.
    pub fn new(source_path: impl Into<String>) -> Result<Self, StreamingError> {
        let source_path = source_path.into();
        let staged_name = Path::new(&source_path)
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| StreamingError::SourceMissing(source_path.clone()))?
            .to_owned();
        Ok(Self {
            source_path,
            staged_name,
        })
    }
}

/// Where shipped files are read from.
pub trait FileSource: Sync {
    fn fetch(&self, path: &str) -> io::Result<Vec<u8>>;
}

/// Reads sources from the local file system.
pub struct LocalFiles;

impl FileSource for LocalFiles {
    fn fetch(&self, path: &str) -> io::Result<Vec<u8>> {
        fs::read(path)
    }
}

pub fn staging_dir(root: &Path, job: &JobId, node: NodeId) -> PathBuf {
    root.join(format!("node-{}", node.0))
        .join("cache")
        .join(job.as_str())
}

/// Copies every entry into the (job, node) work directory, marked executable.
/// Re-shipping overwrites atomically, so it is safe to call once per attempt.
pub fn ship_files(
    entries: &[CacheEntry],
    source: &dyn FileSource,
    root: &Path,
    job: &JobId,
    node: NodeId,
) -> Result<PathBuf, StreamingError> {
    let mut seen = HashSet::new();
    for entry in entries {
        if !seen.insert(entry.staged_name.as_str()) {
            return Err(StreamingError::DuplicateName(entry.staged_name.clone()));
        }
    }

    let dir = staging_dir(root, job, node);
    fs::create_dir_all(&dir).map_err(|e| StreamingError::Io(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let bytes = source
            .fetch(&entry.source_path)
            .map_err(|_| StreamingError::SourceMissing(entry.source_path.clone()))?;
        let target = dir.join(&entry.staged_name);
        let tmp = dir.join(format!(
            ".{}.{}.{:?}",
            entry.staged_name,
            std::process::id(),
            std::thread::current().id()
        ));
        let write = || -> io::Result<()> {
            fs::write(&tmp, &bytes)?;
            fs::set_permissions(&tmp, fs::Permissions::from_mode(0o755))?;
            fs::rename(&tmp, &target)
        };
        write().map_err(|e| StreamingError::Io(format!("{}: {e}", target.display())))?;
    }
    Ok(dir)
}
