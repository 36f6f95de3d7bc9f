//! Fixture generator, reference word count and job helpers for the
//! acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use mrs_core::config::Config;
use mrs_core::engine::{JobPhase, JobSpec, JobStatus, TaskAttempt};
use mrs_core::jobd::Daemon;

pub const CORPUS_SEED: u64 = 20_160_913;
pub const CORPUS_BYTES: usize = 10 * 1024 * 1024;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Seeded text: lines of 0..16 words over a 5000-word lowercase vocabulary,
/// word ranks drawn log-uniformly so a few words dominate.
pub fn generate_corpus(seed: u64, bytes: usize) -> Vec<u8> {
    let mut rng = StdRng::seed_from_u64(seed);
    let vocab: Vec<Vec<u8>> = (0..5000)
        .map(|_| {
            let len = rng.gen_range(1..=12);
            (0..len).map(|_| rng.gen_range(b'a'..=b'z')).collect()
        })
        .collect();
    let max = (vocab.len() as f64).ln();
    let mut out = Vec::with_capacity(bytes + 256);
    while out.len() < bytes {
        let words = rng.gen_range(0..16);
        for i in 0..words {
            if i > 0 {
                out.push(b' ');
            }
            let rank = (rng.gen::<f64>() * max).exp() as usize - 1;
            out.extend_from_slice(&vocab[rank.min(vocab.len() - 1)]);
        }
        out.push(b'\n');
    }
    out
}

/// Single-threaded word count: words split on blanks, counted, routed to
/// partition FNV-1a-64(word) mod R (hash from the `fnv` crate), each
/// partition sorted by word bytes and printed as `word TAB count NEWLINE`,
/// partitions concatenated in index order.
pub fn reference_wordcount(text: &[u8], reducers: usize) -> Vec<u8> {
    let mut counts: BTreeMap<&[u8], u64> = BTreeMap::new();
    for line in text.split(|&b| b == b'\n') {
        for w in line.split(|&b| b == b' ' || b == b'\t').filter(|w| !w.is_empty()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut parts = vec![Vec::new(); reducers];
    for (w, n) in counts {
        let mut h = fnv::FnvHasher::default();
        h.write(w);
        let part = &mut parts[(h.finish() % reducers as u64) as usize];
        part.extend_from_slice(w);
        part.extend_from_slice(format!("\t{n}\n").as_bytes());
    }
    parts.concat()
}

pub struct Cluster {
    pub daemon: Arc<Daemon>,
    _data: tempfile::TempDir,
}

impl Cluster {
    /// In-process daemon: 4 nodes of 2 slots, 256 KiB blocks, replication 2.
    pub fn start(shuffle_seed: Option<u64>) -> Self {
        let data = tempfile::tempdir().unwrap();
        let mut config = Config::from_toml(
            "[cluster]\nnodes = 4\ncapacity = 2\n[dfs]\nblock_size = 262144\nreplication = 2\n",
        )
        .unwrap();
        config.jobd.data_dir = data.path().to_owned();
        config.engine.shuffle_seed = shuffle_seed;
        Self {
            daemon: Arc::new(Daemon::start(&config).unwrap()),
            _data: data,
        }
    }

    /// Uploads local files under `/apps/` and returns their DFS paths.
    pub fn ship(&self, locals: &[PathBuf]) -> Vec<String> {
        locals
            .iter()
            .map(|p| {
                let dst = format!("/apps/{}", p.file_name().unwrap().to_str().unwrap());
                if !self.daemon.dfs().exists(&dst) {
                    self.daemon.dfs().put(&dst, &std::fs::read(p).unwrap()).unwrap();
                }
                dst
            })
            .collect()
    }

    pub fn run(&self, spec: JobSpec) -> Result<Finished, String> {
        let engine = self.daemon.engine();
        let id = engine.submit(spec.clone()).map_err(|e| e.to_string())?;
        let status = engine.wait(&id, Duration::from_secs(600)).map_err(|e| e.to_string())?;
        let attempts = engine.attempts(&id).unwrap();
        let dfs = self.daemon.dfs();
        let files: Vec<String> = dfs.ls(&format!("{}/", spec.output)).into_iter().map(|f| f.path).collect();
        let output = files
            .iter()
            .filter(|p| !p.contains("/_tmp/"))
            .flat_map(|p| dfs.get(p).unwrap())
            .collect();
        Ok(Finished {
            status,
            attempts,
            files,
            output,
        })
    }
}

pub struct Finished {
    pub status: JobStatus,
    pub attempts: Vec<TaskAttempt>,
    pub files: Vec<String>,
    pub output: Vec<u8>,
}

impl Finished {
    pub fn succeeded(self) -> Result<Self, String> {
        if self.status.phase == JobPhase::Succeeded {
            Ok(self)
        } else {
            Err(format!("job ended {}: {:?}", self.status.phase, self.status.diagnostics))
        }
    }
}

/// First differing byte, for readable mismatch reports.
pub fn compare(label: &str, got: &[u8], want: &[u8]) -> Result<(), String> {
    if got == want {
        return Ok(());
    }
    let at = got.iter().zip(want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
    Err(format!(
        "{label}: {} bytes vs {} expected, first difference at byte {at}",
        got.len(),
        want.len()
    ))
}
