use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::shuffle::{merge_sorted, partition, read_spill, sort_records, write_spill};
use super::split::read_split_lines;
use super::{AttemptError, InputSplit, JobSpec, Record, TaskKind};
use crate::cluster::NodeId;
use crate::dfs::Dfs;
use crate::streaming::codec::StreamingCodec;
use crate::streaming::{
    run_worker, spawn_worker, CancelToken, WorkerOptions, ENV_ATTEMPT, ENV_TASK_INDEX,
    ENV_TASK_KIND,
};

/// Everything an attempt needs besides its task description.
pub struct AttemptContext<'a> {
    pub dfs: &'a Dfs,
    pub node: NodeId,
    pub attempt_no: u32,
    /// Staged distributed-cache directory; the worker's cwd.
    pub workdir: &'a Path,
    /// Private directory for this attempt's spills.
    pub scratch: &'a Path,
    pub timeout: Duration,
    pub cancel: CancelToken,
}

impl AttemptContext<'_> {
    fn worker_options(&self, kind: TaskKind, index: usize) -> WorkerOptions {
        WorkerOptions::default()
            .env(ENV_TASK_KIND, kind.as_env())
            .env(ENV_TASK_INDEX, index.to_string())
            .env(ENV_ATTEMPT, self.attempt_no.to_string())
            .timeout(self.timeout)
            .cancel(self.cancel.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapAttemptOutput {
    /// One spill per partition, indexed by partition. Empty for map-only jobs.
    pub spills: Vec<PathBuf>,
    /// Uncommitted DFS output for map-only jobs.
    pub temp_output: Option<String>,
    pub records_in: u64,
    pub records_out: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReduceAttemptOutput {
    pub temp_output: String,
    pub records_in: u64,
    pub records_out: u64,
}

/// Committed map output for one partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpillSource {
    pub map_index: usize,
    pub node: NodeId,
    pub path: PathBuf,
}

pub fn spill_name(map_index: usize, partition: usize) -> String {
    format!("m{map_index}-p{partition}")
}

pub fn temp_output_path(spec: &JobSpec, kind: TaskKind, index: usize, attempt_no: u32) -> String {
    let k = match kind {
        TaskKind::Map => 'm',
        TaskKind::Reduce => 'r',
    };
    format!("{}/_tmp/{k}{index:05}.a{attempt_no}", spec.output)
}

/// Feeds the split's lines to the mapper, partitions and sorts its output.
///
/// With a reducer the sorted partitions become node-local spills; map-only
/// jobs write the single sorted run to a temporary DFS file instead.
pub fn run_map_attempt(
    split: &InputSplit,
    spec: &JobSpec,
    ctx: &AttemptContext<'_>,
) -> Result<MapAttemptOutput, AttemptError> {
    let lines = read_split_lines(ctx.dfs, split)?;
    let records_in = lines.len() as u64;
    let opts = ctx.worker_options(TaskKind::Map, split.index);
    let result = spawn_worker(&spec.mapper, &lines, ctx.workdir, &opts)?;
    if !result.success() {
        return Err(AttemptError::worker_exit(result.exit_code, &result.stderr_tail));
    }
    let records_out = result.records.len() as u64;

    if spec.is_map_only() {
        let mut records = result.records;
        sort_records(&mut records);
        let codec = StreamingCodec::default();
        let mut bytes = Vec::new();
        for r in &records {
            codec
                .encode_into(r, &mut bytes)
                .map_err(crate::streaming::StreamingError::from)?;
        }
        let temp = temp_output_path(spec, TaskKind::Map, split.index, ctx.attempt_no);
        ctx.dfs.put(&temp, &bytes)?;
        return Ok(MapAttemptOutput {
            spills: Vec::new(),
            temp_output: Some(temp),
            records_in,
            records_out,
        });
    }

    let reducers = spec.num_reducers;
    let mut partitions: Vec<Vec<Record>> = vec![Vec::new(); reducers];
    for r in result.records {
        partitions[partition(&r.key, reducers)].push(r);
    }
    fs::create_dir_all(ctx.scratch)?;
    let mut spills = Vec::with_capacity(reducers);
    for (p, mut records) in partitions.into_iter().enumerate() {
        sort_records(&mut records);
        let path = ctx.scratch.join(spill_name(split.index, p));
        write_spill(&path, &records)?;
        spills.push(path);
    }
    Ok(MapAttemptOutput {
        spills,
        temp_output: None,
        records_in,
        records_out,
    })
}

/// Fetches the partition from every map, merges, runs the reducer and stores
/// its stdout verbatim in a temporary DFS file.
pub fn run_reduce_attempt(
    partition_index: usize,
    spec: &JobSpec,
    sources: &[SpillSource],
    ctx: &AttemptContext<'_>,
) -> Result<ReduceAttemptOutput, AttemptError> {
    let cluster = ctx.dfs.cluster();
    let mut fetched = Vec::with_capacity(sources.len());
    for src in sources {
        if !cluster.is_alive(src.node) {
            return Err(AttemptError::FetchFailed {
                map_index: src.map_index,
                reason: format!("{} is dead", src.node),
            });
        }
        let records = read_spill(&src.path).map_err(|e| AttemptError::FetchFailed {
            map_index: src.map_index,
            reason: format!("{}: {e}", src.path.display()),
        })?;
        fetched.push(records.into_iter());
    }

    let codec = StreamingCodec::default();
    let mut records_in = 0u64;
    let input = merge_sorted(fetched).map(|r| {
        records_in += 1;
        let mut line = codec.encode(&r).expect("spilled records are newline free");
        line.pop();
        line
    });

    let mut output = Vec::new();
    let mut records_out = 0u64;
    let opts = ctx.worker_options(TaskKind::Reduce, partition_index);
    let exit = run_worker(
        spec.reducer.as_deref().expect("reduce attempt without reducer"),
        input,
        ctx.workdir,
        &opts,
        |line| {
            records_out += 1;
            output.extend_from_slice(line);
            Ok(())
        },
    )?;
    if !exit.success() {
        return Err(AttemptError::worker_exit(exit.exit_code, &exit.stderr_tail));
    }
    let temp = temp_output_path(spec, TaskKind::Reduce, partition_index, ctx.attempt_no);
    ctx.dfs.put(&temp, &output)?;
    Ok(ReduceAttemptOutput {
        temp_output: temp,
        records_in,
        records_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::cluster::Cluster;
    use crate::dfs::{DfsConfig, MemoryStore};
    use crate::engine::plan_splits;
    use std::sync::Arc;

    struct Fixture {
        dfs: Dfs,
        dir: tempfile::TempDir,
    }

    fn fixture() -> Fixture {
        let cluster = Arc::new(Cluster::new(Arc::new(ManualClock::new()), Duration::from_secs(5)));
        cluster.register_node(2).unwrap();
        cluster.register_node(2).unwrap();
        let dfs = Dfs::new(DfsConfig::default(), cluster, Arc::new(MemoryStore::new()));
        Fixture {
            dfs,
            dir: tempfile::tempdir().unwrap(),
        }
    }

    impl Fixture {
        fn ctx(&self, attempt_no: u32) -> AttemptContext<'_> {
            AttemptContext {
                dfs: &self.dfs,
                node: NodeId(1),
                attempt_no,
                workdir: self.dir.path(),
                scratch: self.dir.path(),
                timeout: Duration::from_secs(30),
                cancel: CancelToken::new(),
            }
        }

        fn script(&self, name: &str, body: &str) {
            use std::os::unix::fs::PermissionsExt;
            let p = self.dir.path().join(name);
            fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
            fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
        }
    }

    #[test]
    fn identity_map_sorts_its_single_partition() {
        let f = fixture();
        let file = f.dfs.put("/in", b"b\na\n").unwrap();
        let split = &plan_splits(&file, 1024)[0];
        let spec = JobSpec::new("/in", "/out", "cat").reducer("cat");
        let out = run_map_attempt(split, &spec, &f.ctx(1)).unwrap();
        assert_eq!(out.spills.len(), 1);
        assert_eq!(fs::read(&out.spills[0]).unwrap(), b"a\t\nb\t\n");
        assert_eq!((out.records_in, out.records_out), (2, 2));
    }

    #[test]
    fn silent_mapper_leaves_empty_spills() {
        let f = fixture();
        f.script("silent.sh", "cat >/dev/null");
        let file = f.dfs.put("/in", b"x\ny\n").unwrap();
        let split = &plan_splits(&file, 1024)[0];
        let spec = JobSpec::new("/in", "/out", "silent.sh").reducer("cat").num_reducers(3);
        let out = run_map_attempt(split, &spec, &f.ctx(1)).unwrap();
        assert_eq!(out.spills.len(), 3);
        for s in &out.spills {
            assert_eq!(fs::read(s).unwrap(), b"");
        }
    }

    #[test]
    fn mapper_exit_one_fails() {
        let f = fixture();
        f.script("bad.sh", "cat >/dev/null; echo nope >&2; exit 1");
        let file = f.dfs.put("/in", b"x\n").unwrap();
        let split = &plan_splits(&file, 1024)[0];
        let spec = JobSpec::new("/in", "/out", "bad.sh").reducer("cat");
        let err = run_map_attempt(split, &spec, &f.ctx(1)).unwrap_err();
        match err {
            AttemptError::WorkerFailed(msg) => assert_eq!(msg, "exit code 1: nope"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn map_only_writes_sorted_temp_output() {
        let f = fixture();
        let file = f.dfs.put("/in", b"zeta\nalpha\n").unwrap();
        let split = &plan_splits(&file, 1024)[0];
        let spec = JobSpec::new("/in", "/out", "cat");
        let out = run_map_attempt(split, &spec, &f.ctx(2)).unwrap();
        let temp = out.temp_output.unwrap();
        assert_eq!(temp, "/out/_tmp/m00000.a2");
        assert_eq!(f.dfs.get(&temp).unwrap(), b"alpha\t\nzeta\t\n");
    }

    #[test]
    fn identity_reduce_emits_merged_sorted_records() {
        let f = fixture();
        let s0 = f.dir.path().join("s0");
        let s1 = f.dir.path().join("s1");
        write_spill(&s0, &[Record::new("a", "1"), Record::new("c", "1")]).unwrap();
        write_spill(&s1, &[Record::new("b", "2"), Record::new("c", "2")]).unwrap();
        let sources = [
            SpillSource { map_index: 0, node: NodeId(1), path: s0 },
            SpillSource { map_index: 1, node: NodeId(2), path: s1 },
        ];
        let spec = JobSpec::new("/in", "/out", "cat").reducer("cat");
        let out = run_reduce_attempt(0, &spec, &sources, &f.ctx(1)).unwrap();
        assert_eq!(out.temp_output, "/out/_tmp/r00000.a1");
        assert_eq!(f.dfs.get(&out.temp_output).unwrap(), b"a\t1\nb\t2\nc\t1\nc\t2\n");
        assert_eq!((out.records_in, out.records_out), (4, 4));
    }

    #[test]
    fn empty_partition_still_produces_output_file() {
        let f = fixture();
        let spec = JobSpec::new("/in", "/out", "cat").reducer("cat");
        let out = run_reduce_attempt(1, &spec, &[], &f.ctx(1)).unwrap();
        assert_eq!(f.dfs.get(&out.temp_output).unwrap(), b"");
    }

    #[test]
    fn reducer_stdout_is_kept_verbatim() {
        let f = fixture();
        f.script("r.sh", "cat >/dev/null; printf 'no tab here\\nlast'");
        let spec = JobSpec::new("/in", "/out", "cat").reducer("r.sh");
        let out = run_reduce_attempt(0, &spec, &[], &f.ctx(1)).unwrap();
        assert_eq!(f.dfs.get(&out.temp_output).unwrap(), b"no tab here\nlast");
    }

    #[test]
    fn reducer_exit_one_fails() {
        let f = fixture();
        let spec = JobSpec::new("/in", "/out", "cat").reducer("false");
        let err = run_reduce_attempt(0, &spec, &[], &f.ctx(1)).unwrap_err();
        assert!(matches!(err, AttemptError::WorkerFailed(_)));
        assert!(f.dfs.ls("/out/").is_empty());
    }

    #[test]
    fn dead_or_missing_spill_is_fetch_failure() {
        let f = fixture();
        let spec = JobSpec::new("/in", "/out", "cat").reducer("cat");
        let missing = [SpillSource {
            map_index: 4,
            node: NodeId(1),
            path: f.dir.path().join("gone"),
        }];
        let err = run_reduce_attempt(0, &spec, &missing, &f.ctx(1)).unwrap_err();
        assert!(matches!(err, AttemptError::FetchFailed { map_index: 4, .. }));

        f.dfs.cluster().inject_node_failure(NodeId(2)).unwrap();
        let dead = [SpillSource {
            map_index: 7,
            node: NodeId(2),
            path: f.dir.path().join("whatever"),
        }];
        let err = run_reduce_attempt(0, &spec, &dead, &f.ctx(1)).unwrap_err();
        assert!(matches!(err, AttemptError::FetchFailed { map_index: 7, .. }));
    }
}
