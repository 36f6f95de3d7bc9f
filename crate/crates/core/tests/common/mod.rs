#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use mrs_core::clock::ManualClock;
use mrs_core::cluster::{Cluster, NodeId};
use mrs_core::dfs::{Dfs, DfsConfig, MemoryStore};
use mrs_core::engine::{Engine, EngineConfig, JobId, JobStatus};
use tempfile::TempDir;

pub const WAIT: Duration = Duration::from_secs(60);

pub const MAP_SH: &str = "#!/bin/sh\nLC_ALL=C exec awk '{ for (i = 1; i <= NF; i++) print $i \"\\t1\" }'\n";
pub const REDUCE_SH: &str = "#!/bin/sh\nLC_ALL=C exec awk -F '\\t' 'NR > 1 && $1 != prev { print prev \"\\t\" n; n = 0 } { prev = $1; n += $2 } END { if (NR > 0) print prev \"\\t\" n }'\n";

pub struct Rig {
    pub dfs: Arc<Dfs>,
    pub cluster: Arc<Cluster>,
    pub engine: Engine,
    pub nodes: Vec<NodeId>,
    pub work: TempDir,
}

impl Rig {
    pub fn new(nodes: usize, block_size: u64) -> Self {
        Self::with(nodes, 2, block_size, |_| {})
    }

    pub fn with(nodes: usize, capacity: usize, block_size: u64, tweak: impl FnOnce(&mut EngineConfig)) -> Self {
        let work = tempfile::tempdir().unwrap();
        let cluster = Arc::new(Cluster::new(Arc::new(ManualClock::new()), Duration::from_secs(5)));
        let nodes = (0..nodes).map(|_| cluster.register_node(capacity).unwrap()).collect();
        let dfs = Arc::new(Dfs::new(
            DfsConfig {
                block_size,
                ..DfsConfig::default()
            },
            cluster.clone(),
            Arc::new(MemoryStore::new()),
        ));
        dfs.repair_on_node_death();
        let mut config = EngineConfig::new(work.path());
        tweak(&mut config);
        let engine = Engine::start(dfs.clone(), config);
        Self {
            dfs,
            cluster,
            engine,
            nodes,
            work,
        }
    }

    pub fn put_wordcount_scripts(&self) {
        self.dfs.put("/apps/map.sh", MAP_SH.as_bytes()).unwrap();
        self.dfs.put("/apps/reduce.sh", REDUCE_SH.as_bytes()).unwrap();
    }

    pub fn wait(&self, id: &JobId) -> JobStatus {
        self.engine.wait(id, WAIT).unwrap()
    }

    /// Part files under `output`, sorted by name, concatenated.
    pub fn output(&self, output: &str) -> Vec<u8> {
        self.dfs
            .ls(&format!("{output}/"))
            .iter()
            .flat_map(|f| self.dfs.get(&f.path).unwrap())
            .collect()
    }

    pub fn output_names(&self, output: &str) -> Vec<String> {
        self.dfs.ls(&format!("{output}/")).into_iter().map(|f| f.path).collect()
    }
}

/// Word count computed directly: words split on ASCII whitespace, grouped by
/// FNV-1a 64 partition (from the `fnv` crate), each partition sorted by word
/// bytes, partitions concatenated in order.
pub fn reference_wordcount(text: &[u8], reducers: usize) -> Vec<u8> {
    use std::hash::Hasher;
    let mut counts: BTreeMap<&[u8], u64> = BTreeMap::new();
    for w in text.split(|b| b.is_ascii_whitespace()).filter(|w| !w.is_empty()) {
        *counts.entry(w).or_default() += 1;
    }
    let mut parts = vec![Vec::new(); reducers];
    for (w, n) in counts {
        let mut h = fnv::FnvHasher::default();
        h.write(w);
        let p = (h.finish() % reducers as u64) as usize;
        parts[p].extend_from_slice(w);
        parts[p].extend_from_slice(format!("\t{n}\n").as_bytes());
    }
    parts.concat()
}

/// Deterministic text of roughly `bytes` bytes from a small vocabulary.
pub fn corpus(seed: u64, bytes: usize) -> Vec<u8> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..500)
        .map(|i| {
            let len = 1 + i % 9;
            (0..len).map(|j| (b'a' + ((i * 7 + j * 13) % 26) as u8) as char).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(bytes + 64);
    while out.len() < bytes {
        let words = rng.gen_range(0..14);
        for k in 0..words {
            if k > 0 {
                out.push(b' ');
            }
            out.extend_from_slice(vocab[rng.gen_range(0..vocab.len())].as_bytes());
        }
        out.push(b'\n');
    }
    out
}
