use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::attempt::{run_map_attempt, run_reduce_attempt, AttemptContext, SpillSource};
use super::attempt::{MapAttemptOutput, ReduceAttemptOutput};
use super::split::plan_splits;
use super::{
    AttemptError, AttemptState, EngineConfig, EngineError, InputSplit, JobId, JobPhase, JobSpec,
    JobStatus, TaskAttempt, TaskId, TaskKind, COUNTER_RECORDS_IN, COUNTER_RECORDS_OUT,
    TEXT_INPUT_FORMATS,
};
use crate::cluster::{Cluster, NodeId};
use crate::dfs::{validate_path, Dfs, DfsError};
use crate::streaming::{self, ship_files, CacheEntry, CancelToken, FileSource, StreamingError};

/// Called after a map task commits, with `(job, map_done, map_total)`.
/// Runs on the scheduler thread, outside of any engine lock.
pub type ProgressHook = Arc<dyn Fn(&JobId, usize, usize) + Send + Sync>;

/// The job engine. Dropping it stops scheduling and kills running workers.
pub struct Engine {
    shared: Arc<Shared>,
    driver: Option<JoinHandle<()>>,
}

struct Shared {
    dfs: Arc<Dfs>,
    cluster: Arc<Cluster>,
    config: EngineConfig,
    state: Mutex<State>,
    wake: Condvar,
    changed: Condvar,
    hooks: RwLock<Vec<ProgressHook>>,
    staging: Mutex<()>,
}

struct State {
    jobs: BTreeMap<JobId, JobRun>,
    next_job: u64,
    events: Vec<Finished>,
    dirty: bool,
    shutdown: bool,
    busy_slots: HashMap<NodeId, usize>,
    round_robin: usize,
    rng: Option<StdRng>,
    progress: Vec<(JobId, usize, usize)>,
}

struct Finished {
    job: JobId,
    kind: TaskKind,
    index: usize,
    attempt_no: u32,
    node: NodeId,
    outcome: Outcome,
}

enum Outcome {
    Map(Result<MapAttemptOutput, AttemptError>),
    Reduce(Result<ReduceAttemptOutput, AttemptError>),
}

struct JobRun {
    id: JobId,
    spec: JobSpec,
    phase: JobPhase,
    splits: Vec<InputSplit>,
    preferred: Vec<Vec<NodeId>>,
    cache: Vec<CacheEntry>,
    maps: Vec<Task>,
    reduces: Vec<Task>,
    history: Vec<TaskAttempt>,
    diagnostics: Vec<String>,
}

#[derive(Default)]
struct Task {
    issued: u32,
    failures: u32,
    avoid: Option<NodeId>,
    running: Option<Running>,
    done: Option<Committed>,
}

struct Running {
    attempt_no: u32,
    node: NodeId,
    cancel: CancelToken,
    history: usize,
}

struct Committed {
    node: NodeId,
    spills: Vec<PathBuf>,
    records_in: u64,
    records_out: u64,
}

impl Task {
    fn is_pending(&self) -> bool {
        self.running.is_none() && self.done.is_none()
    }
}

impl JobRun {
    fn tasks_mut(&mut self, kind: TaskKind) -> &mut Vec<Task> {
        match kind {
            TaskKind::Map => &mut self.maps,
            TaskKind::Reduce => &mut self.reduces,
        }
    }

    fn task_id(&self, kind: TaskKind, index: usize) -> TaskId {
        TaskId {
            job: self.id.clone(),
            kind,
            index,
        }
    }

    fn maps_done(&self) -> usize {
        self.maps.iter().filter(|t| t.done.is_some()).count()
    }

    fn reduces_done(&self) -> usize {
        self.reduces.iter().filter(|t| t.done.is_some()).count()
    }

    fn part_count(&self) -> usize {
        if self.spec.is_map_only() {
            self.maps.len()
        } else {
            self.reduces.len()
        }
    }

    fn status(&self) -> JobStatus {
        let records_in = self.maps.iter().filter_map(|t| t.done.as_ref()).map(|c| c.records_in).sum();
        let finals = if self.spec.is_map_only() { &self.maps } else { &self.reduces };
        let records_out = finals.iter().filter_map(|t| t.done.as_ref()).map(|c| c.records_out).sum();
        JobStatus {
            id: self.id.clone(),
            phase: self.phase,
            map_done: self.maps_done(),
            map_total: self.maps.len(),
            reduce_done: self.reduces_done(),
            reduce_total: self.reduces.len(),
            counters: BTreeMap::from([
                (COUNTER_RECORDS_IN.to_owned(), records_in),
                (COUNTER_RECORDS_OUT.to_owned(), records_out),
            ]),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

fn part_name(index: usize) -> String {
    format!("part-{index:05}")
}

impl FileSource for Dfs {
    fn fetch(&self, path: &str) -> std::io::Result<Vec<u8>> {
        self.get(path).map_err(std::io::Error::other)
    }
}

impl Engine {
    pub fn start(dfs: Arc<Dfs>, config: EngineConfig) -> Self {
        let cluster = dfs.cluster().clone();
        let shared = Arc::new(Shared {
            dfs,
            cluster: cluster.clone(),
            state: Mutex::new(State {
                jobs: BTreeMap::new(),
                next_job: 1,
                events: Vec::new(),
                dirty: false,
                shutdown: false,
                busy_slots: HashMap::new(),
                round_robin: 0,
                rng: config.shuffle_seed.map(StdRng::seed_from_u64),
                progress: Vec::new(),
            }),
            config,
            wake: Condvar::new(),
            changed: Condvar::new(),
            hooks: RwLock::new(Vec::new()),
            staging: Mutex::new(()),
        });
        let weak: Weak<Shared> = Arc::downgrade(&shared);
        cluster.on_node_death(Arc::new(move |node| {
            if let Some(shared) = weak.upgrade() {
                shared.node_died(node);
            }
        }));
        let driver = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("mrs-scheduler".into())
                .spawn(move || shared.drive())
                .expect("spawn scheduler thread")
        };
        Self {
            shared,
            driver: Some(driver),
        }
    }

    pub fn dfs(&self) -> &Arc<Dfs> {
        &self.shared.dfs
    }

    pub fn config(&self) -> &EngineConfig {
        &self.shared.config
    }

    pub fn on_map_progress(&self, hook: ProgressHook) {
        self.shared.hooks.write().unwrap().push(hook);
    }

    /// Validates and queues a job; execution is asynchronous.
    pub fn submit(&self, spec: JobSpec) -> Result<JobId, EngineError> {
        let shared = &self.shared;
        if !TEXT_INPUT_FORMATS.contains(&spec.input_format.as_str()) {
            return Err(EngineError::BadInputFormat(spec.input_format));
        }
        if spec.num_reducers == 0 {
            return Err(EngineError::BadSpec("num_reducers must be at least 1".into()));
        }
        streaming::split_command(&spec.mapper)
            .map_err(|_| EngineError::BadSpec("empty mapper command".into()))?;
        if let Some(r) = &spec.reducer {
            streaming::split_command(r)
                .map_err(|_| EngineError::BadSpec("empty reducer command".into()))?;
        }
        for p in [&spec.input, &spec.output] {
            validate_path(p).map_err(|e| EngineError::BadSpec(e.to_string()))?;
        }
        let mut cache = Vec::with_capacity(spec.files.len());
        for f in &spec.files {
            let entry = CacheEntry::new(f.clone()).map_err(|e| EngineError::BadSpec(e.to_string()))?;
            if cache.iter().any(|c: &CacheEntry| c.staged_name == entry.staged_name) {
                return Err(EngineError::BadSpec(format!(
                    "{}",
                    StreamingError::DuplicateName(entry.staged_name)
                )));
            }
            if !shared.dfs.exists(f) {
                return Err(EngineError::BadSpec(format!("shipped file {f} not found")));
            }
            cache.push(entry);
        }

        let input = shared.dfs.stat(&spec.input).map_err(|e| match e {
            DfsError::NotFound(p) => EngineError::InputNotFound(p),
            other => EngineError::Dfs(other),
        })?;
        let under = format!("{}/", spec.output);
        if shared.dfs.exists(&spec.output) || !shared.dfs.ls(&under).is_empty() {
            return Err(EngineError::OutputExists(spec.output));
        }
        if shared.cluster.live_nodes().is_empty() {
            return Err(EngineError::NoLiveNodes);
        }

        let split_size = shared.config.split_size.unwrap_or(shared.dfs.config().block_size);
        let splits = plan_splits(&input, split_size);
        let preferred = splits
            .iter()
            .map(|s| {
                input
                    .locate(s.offset)
                    .map(|(b, _)| input.blocks[b].locations.iter().copied().collect())
                    .unwrap_or_default()
            })
            .collect();

        let mut st = shared.state.lock().unwrap();
        if st
            .jobs
            .values()
            .any(|j| !j.phase.is_terminal() && j.spec.output == spec.output)
        {
            return Err(EngineError::OutputExists(spec.output));
        }
        let id = JobId::from_counter(st.next_job);
        st.next_job += 1;
        let reduces = if spec.is_map_only() { 0 } else { spec.num_reducers };
        log::info!(
            "{id}: submitted, {} maps, {reduces} reduces, input {}",
            splits.len(),
            spec.input
        );
        let run = JobRun {
            id: id.clone(),
            maps: (0..splits.len()).map(|_| Task::default()).collect(),
            reduces: (0..reduces).map(|_| Task::default()).collect(),
            spec,
            phase: JobPhase::Pending,
            splits,
            preferred,
            cache,
            history: Vec::new(),
            diagnostics: Vec::new(),
        };
        st.jobs.insert(id.clone(), run);
        st.dirty = true;
        shared.wake.notify_all();
        Ok(id)
    }

    pub fn status(&self, id: &JobId) -> Result<JobStatus, EngineError> {
        let st = self.shared.state.lock().unwrap();
        st.jobs
            .get(id)
            .map(JobRun::status)
            .ok_or_else(|| EngineError::UnknownJob(id.clone()))
    }

    /// Blocks until the job is terminal or `timeout` passes.
    pub fn wait(&self, id: &JobId, timeout: Duration) -> Result<JobStatus, EngineError> {
        let deadline = Instant::now()
            .checked_add(timeout)
            .unwrap_or_else(|| Instant::now() + Duration::from_secs(365 * 24 * 3600));
        let mut st = self.shared.state.lock().unwrap();
        loop {
            let job = st
                .jobs
                .get(id)
                .ok_or_else(|| EngineError::UnknownJob(id.clone()))?;
            if job.phase.is_terminal() {
                return Ok(job.status());
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(EngineError::WaitTimeout(id.clone()));
            }
            st = self.shared.changed.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    pub fn kill(&self, id: &JobId) -> Result<(), EngineError> {
        let shared = &self.shared;
        let mut st = shared.state.lock().unwrap();
        let job = st
            .jobs
            .get_mut(id)
            .ok_or_else(|| EngineError::UnknownJob(id.clone()))?;
        if job.phase.is_terminal() {
            return Err(EngineError::AlreadyTerminal(id.clone()));
        }
        shared.fail_job(job, "killed by client".into());
        st.dirty = true;
        shared.wake.notify_all();
        shared.changed.notify_all();
        Ok(())
    }

    pub fn jobs(&self) -> Vec<JobId> {
        self.shared.state.lock().unwrap().jobs.keys().cloned().collect()
    }

    /// Every attempt made for the job so far, in launch order.
    pub fn attempts(&self, id: &JobId) -> Result<Vec<TaskAttempt>, EngineError> {
        let st = self.shared.state.lock().unwrap();
        st.jobs
            .get(id)
            .map(|j| j.history.clone())
            .ok_or_else(|| EngineError::UnknownJob(id.clone()))
    }

    /// Running attempts per node right now.
    pub fn busy_slots(&self) -> BTreeMap<NodeId, usize> {
        let st = self.shared.state.lock().unwrap();
        st.busy_slots
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&k, &v)| (k, v))
            .collect()
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        {
            let mut st = self.shared.state.lock().unwrap();
            st.shutdown = true;
            for job in st.jobs.values() {
                for t in job.maps.iter().chain(&job.reduces) {
                    if let Some(r) = &t.running {
                        r.cancel.cancel();
                    }
                }
            }
            self.shared.wake.notify_all();
        }
        if let Some(driver) = self.driver.take() {
            let _ = driver.join();
        }
    }
}

impl Shared {
    fn drive(self: &Arc<Self>) {
        loop {
            let mut st = self.state.lock().unwrap();
            while !st.shutdown && st.events.is_empty() && !st.dirty {
                st = self.wake.wait(st).unwrap();
            }
            if st.shutdown {
                return;
            }
            st.dirty = false;
            let mut events = std::mem::take(&mut st.events);
            if let Some(rng) = st.rng.as_mut() {
                events.shuffle(rng);
            }
            for ev in events {
                self.apply(&mut st, ev);
            }
            self.advance(&mut st);
            self.schedule(&mut st);
            let progress = std::mem::take(&mut st.progress);
            self.changed.notify_all();
            drop(st);

            if !progress.is_empty() {
                let hooks = self.hooks.read().unwrap().clone();
                for (job, done, total) in &progress {
                    for hook in &hooks {
                        hook(job, *done, *total);
                    }
                }
            }
        }
    }

    fn apply(&self, st: &mut State, ev: Finished) {
        if let Some(n) = st.busy_slots.get_mut(&ev.node) {
            *n = n.saturating_sub(1);
        }
        let scratch = self.scratch_dir(&ev.job, ev.node, ev.kind, ev.index, ev.attempt_no);
        let Some(job) = st.jobs.get_mut(&ev.job) else {
            return;
        };
        let terminal = job.phase.is_terminal();
        let task = &mut job.tasks_mut(ev.kind)[ev.index];
        let current = task
            .running
            .as_ref()
            .is_some_and(|r| r.attempt_no == ev.attempt_no);
        if terminal || !current {
            self.discard(&ev.outcome, &scratch);
            return;
        }
        let running = task.running.take().expect("current attempt");
        let task_id = job.task_id(ev.kind, ev.index);

        let result = match ev.outcome {
            Outcome::Map(Ok(out)) => {
                let committed = match &out.temp_output {
                    Some(temp) => self.commit_task_output(job, temp, ev.index),
                    None => Ok(()),
                };
                committed.map(|()| Committed {
                    node: ev.node,
                    spills: out.spills,
                    records_in: out.records_in,
                    records_out: out.records_out,
                })
            }
            Outcome::Reduce(Ok(out)) => self
                .commit_task_output(job, &out.temp_output, ev.index)
                .map(|()| Committed {
                    node: ev.node,
                    spills: Vec::new(),
                    records_in: out.records_in,
                    records_out: out.records_out,
                }),
            Outcome::Map(Err(e)) | Outcome::Reduce(Err(e)) => Err(e),
        };

        match result {
            Ok(committed) => {
                job.history[running.history].state = AttemptState::Succeeded;
                log::debug!("{task_id} attempt {} succeeded on {}", ev.attempt_no, ev.node);
                let task = &mut job.tasks_mut(ev.kind)[ev.index];
                task.done = Some(committed);
                task.avoid = None;
                if ev.kind == TaskKind::Map {
                    st.progress
                        .push((job.id.clone(), job.maps_done(), job.maps.len()));
                }
            }
            Err(AttemptError::FetchFailed { map_index, reason }) => {
                job.history[running.history].state = AttemptState::Killed;
                job.diagnostics.push(format!(
                    "{task_id} attempt {} could not fetch map {map_index}: {reason}",
                    ev.attempt_no
                ));
                let _ = fs::remove_dir_all(&scratch);
                self.reset_map(job, map_index);
            }
            Err(e) => {
                let _ = fs::remove_dir_all(&scratch);
                self.task_failed(job, ev.kind, ev.index, running, e.to_string());
            }
        }
    }

    /// First rename into `_tmp/part-N` wins; later duplicates are deleted.
    fn commit_task_output(&self, job: &JobRun, temp: &str, index: usize) -> Result<(), AttemptError> {
        let dst = format!("{}/_tmp/{}", job.spec.output, part_name(index));
        match self.dfs.rename(temp, &dst) {
            Ok(()) => Ok(()),
            Err(DfsError::AlreadyExists(_)) => {
                let _ = self.dfs.delete(temp);
                Ok(())
            }
            Err(e) => {
                let _ = self.dfs.delete(temp);
                Err(e.into())
            }
        }
    }

    fn discard(&self, outcome: &Outcome, scratch: &PathBuf) {
        let temp = match outcome {
            Outcome::Map(Ok(out)) => out.temp_output.as_deref(),
            Outcome::Reduce(Ok(out)) => Some(out.temp_output.as_str()),
            _ => None,
        };
        if let Some(temp) = temp {
            let _ = self.dfs.delete(temp);
        }
        let _ = fs::remove_dir_all(scratch);
    }

    /// Retry on another node while budget remains; otherwise fail the job.
    fn task_failed(&self, job: &mut JobRun, kind: TaskKind, index: usize, running: Running, reason: String) {
        job.history[running.history].state = AttemptState::Failed;
        let task_id = job.task_id(kind, index);
        let msg = format!(
            "{task_id} attempt {} on {} failed: {reason}",
            running.attempt_no, running.node
        );
        log::warn!("{msg}");
        job.diagnostics.push(msg);
        let max = self.config.max_attempts;
        let task = &mut job.tasks_mut(kind)[index];
        task.failures += 1;
        task.avoid = Some(running.node);
        if task.failures >= max {
            self.fail_job(job, format!("{task_id} failed {max} times"));
        }
    }

    /// A committed map output is gone: run the map again and hold reducers.
    fn reset_map(&self, job: &mut JobRun, map_index: usize) {
        let Some(lost) = job.maps[map_index].done.take() else {
            return;
        };
        job.diagnostics.push(format!(
            "{} output on {} lost; re-executing",
            job.task_id(TaskKind::Map, map_index),
            lost.node
        ));
        if job.phase == JobPhase::Reducing {
            job.phase = JobPhase::Mapping;
        }
        for task in &mut job.reduces {
            if let Some(r) = task.running.take() {
                r.cancel.cancel();
                job.history[r.history].state = AttemptState::Killed;
            }
        }
    }

    fn fail_job(&self, job: &mut JobRun, reason: String) {
        log::warn!("{}: failed: {reason}", job.id);
        job.phase = JobPhase::Failed;
        job.diagnostics.push(reason);
        for task in job.maps.iter_mut().chain(job.reduces.iter_mut()) {
            if let Some(r) = task.running.take() {
                r.cancel.cancel();
                job.history[r.history].state = AttemptState::Killed;
            }
        }
        self.remove_output_tree(&job.spec.output);
        self.remove_scratch(&job.id);
    }

    fn remove_output_tree(&self, output: &str) {
        for f in self.dfs.ls(&format!("{output}/")) {
            let _ = self.dfs.delete(&f.path);
        }
    }

    fn remove_scratch(&self, job: &JobId) {
        for node in self.cluster.list_nodes() {
            let base = self.config.work_root.join(format!("node-{}", node.id.0));
            let _ = fs::remove_dir_all(base.join("spill").join(job.as_str()));
            let _ = fs::remove_dir_all(base.join("cache").join(job.as_str()));
        }
    }

    fn node_died(&self, node: NodeId) {
        let mut st = self.state.lock().unwrap();
        for job in st.jobs.values_mut() {
            if job.phase.is_terminal() {
                continue;
            }
            for kind in [TaskKind::Map, TaskKind::Reduce] {
                for index in 0..job.tasks_mut(kind).len() {
                    let task = &mut job.tasks_mut(kind)[index];
                    if task.running.as_ref().is_some_and(|r| r.node == node) {
                        let r = task.running.take().unwrap();
                        r.cancel.cancel();
                        self.task_failed(job, kind, index, r, format!("{node} died"));
                        if job.phase.is_terminal() {
                            break;
                        }
                    }
                }
            }
            if job.phase.is_terminal() || job.spec.is_map_only() {
                continue;
            }
            if job.reduces_done() < job.reduces.len() {
                let lost: Vec<usize> = job
                    .maps
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.done.as_ref().is_some_and(|c| c.node == node))
                    .map(|(i, _)| i)
                    .collect();
                for i in lost {
                    self.reset_map(job, i);
                }
            }
        }
        st.dirty = true;
        self.wake.notify_all();
        self.changed.notify_all();
    }

    fn advance(&self, st: &mut State) {
        for job in st.jobs.values_mut() {
            if job.phase.is_terminal() {
                continue;
            }
            if job.maps_done() < job.maps.len() {
                continue;
            }
            if !job.spec.is_map_only() && job.phase != JobPhase::Reducing {
                job.phase = JobPhase::Reducing;
            }
            if job.reduces_done() == job.reduces.len() {
                self.commit_job(job);
            }
        }
    }

    /// Moves every `_tmp/part-N` into place and clears `_tmp`.
    fn commit_job(&self, job: &mut JobRun) {
        let out = job.spec.output.clone();
        for i in 0..job.part_count() {
            let name = part_name(i);
            if let Err(e) = self.dfs.rename(&format!("{out}/_tmp/{name}"), &format!("{out}/{name}")) {
                self.fail_job(job, format!("commit of {name} failed: {e}"));
                return;
            }
        }
        for f in self.dfs.ls(&format!("{out}/_tmp/")) {
            let _ = self.dfs.delete(&f.path);
        }
        self.remove_scratch(&job.id);
        job.phase = JobPhase::Succeeded;
        log::info!("{}: succeeded, {} part files", job.id, job.part_count());
    }

    fn schedule(self: &Arc<Self>, st: &mut State) {
        let nodes: Vec<(NodeId, usize)> = self
            .cluster
            .list_nodes()
            .into_iter()
            .filter(|n| n.is_alive())
            .map(|n| (n.id, n.capacity))
            .collect();
        if nodes.is_empty() {
            for job in st.jobs.values_mut() {
                if !job.phase.is_terminal() {
                    self.fail_job(job, "no live nodes".into());
                }
            }
            return;
        }

        let mut order: Vec<JobId> = st
            .jobs
            .values()
            .filter(|j| !j.phase.is_terminal())
            .map(|j| j.id.clone())
            .collect();
        if order.is_empty() {
            return;
        }
        let shift = st.round_robin % order.len();
        order.rotate_left(shift);
        st.round_robin = st.round_robin.wrapping_add(1);

        loop {
            let mut placed = false;
            for id in &order {
                placed |= self.place_one(st, id, &nodes);
            }
            if !placed {
                break;
            }
        }
    }

    fn place_one(self: &Arc<Self>, st: &mut State, id: &JobId, nodes: &[(NodeId, usize)]) -> bool {
        let free: Vec<NodeId> = nodes
            .iter()
            .filter(|(n, cap)| st.busy_slots.get(n).copied().unwrap_or(0) < *cap)
            .map(|(n, _)| *n)
            .collect();
        if free.is_empty() {
            return false;
        }
        let job = &st.jobs[id];
        let (kind, mut candidates): (TaskKind, Vec<usize>) = if job.maps_done() < job.maps.len() {
            (
                TaskKind::Map,
                (0..job.maps.len()).filter(|&i| job.maps[i].is_pending()).collect(),
            )
        } else {
            (
                TaskKind::Reduce,
                (0..job.reduces.len()).filter(|&i| job.reduces[i].is_pending()).collect(),
            )
        };
        if let Some(rng) = st.rng.as_mut() {
            candidates.shuffle(rng);
        }
        for index in candidates {
            let job = &st.jobs[id];
            let (avoid, preferred): (Option<NodeId>, Vec<NodeId>) = match kind {
                TaskKind::Map => (job.maps[index].avoid, job.preferred[index].clone()),
                TaskKind::Reduce => (job.reduces[index].avoid, Vec::new()),
            };
            let Some(node) = pick_node(&free, nodes, avoid, &preferred, st) else {
                continue;
            };
            self.launch(st, id, kind, index, node);
            return true;
        }
        false
    }

    fn launch(self: &Arc<Self>, st: &mut State, id: &JobId, kind: TaskKind, index: usize, node: NodeId) {
        let jitter = st
            .rng
            .as_mut()
            .map(|rng| Duration::from_millis(rng.gen_range(0..12)))
            .unwrap_or_default();
        *st.busy_slots.entry(node).or_default() += 1;
        let job = st.jobs.get_mut(id).expect("scheduled job exists");
        if job.phase == JobPhase::Pending {
            job.phase = if kind == TaskKind::Map {
                JobPhase::Mapping
            } else {
                JobPhase::Reducing
            };
        }
        let cancel = CancelToken::new();
        let task_id = job.task_id(kind, index);
        let attempt_no = {
            let task = &mut job.tasks_mut(kind)[index];
            task.issued += 1;
            task.issued
        };
        job.history.push(TaskAttempt {
            task: task_id.clone(),
            attempt_no,
            node,
            state: AttemptState::Running,
        });
        let history = job.history.len() - 1;
        job.tasks_mut(kind)[index].running = Some(Running {
            attempt_no,
            node,
            cancel: cancel.clone(),
            history,
        });
        log::debug!("{task_id} attempt {attempt_no} -> {node}");

        let work = match kind {
            TaskKind::Map => Work::Map(job.splits[index].clone()),
            TaskKind::Reduce => Work::Reduce(
                job.maps
                    .iter()
                    .enumerate()
                    .map(|(m, t)| {
                        let c = t.done.as_ref().expect("reduce scheduled after all maps");
                        SpillSource {
                            map_index: m,
                            node: c.node,
                            path: c.spills[index].clone(),
                        }
                    })
                    .collect(),
            ),
        };
        let run = AttemptRun {
            shared: self.clone(),
            job: job.id.clone(),
            spec: job.spec.clone(),
            cache: job.cache.clone(),
            kind,
            index,
            attempt_no,
            node,
            cancel,
            jitter,
            work,
        };
        thread::Builder::new()
            .name(format!("{task_id}.a{attempt_no}"))
            .spawn(move || run.execute())
            .expect("spawn attempt thread");
    }

    fn scratch_dir(&self, job: &JobId, node: NodeId, kind: TaskKind, index: usize, attempt_no: u32) -> PathBuf {
        let k = match kind {
            TaskKind::Map => 'm',
            TaskKind::Reduce => 'r',
        };
        self.config
            .work_root
            .join(format!("node-{}", node.0))
            .join("spill")
            .join(job.as_str())
            .join(format!("{k}{index}.a{attempt_no}"))
    }
}

/// Data-local free nodes first, then any free node, never the node the task
/// last failed on unless it is the only one alive. Among equals, the least
/// busy (then lowest id) wins, or a random one when shuffling.
fn pick_node(
    free: &[NodeId],
    alive: &[(NodeId, usize)],
    avoid: Option<NodeId>,
    preferred: &[NodeId],
    st: &mut State,
) -> Option<NodeId> {
    let allowed: Vec<NodeId> = free.iter().copied().filter(|n| Some(*n) != avoid).collect();
    let pool = if !allowed.is_empty() {
        allowed
    } else if alive.len() == 1 && Some(alive[0].0) == avoid {
        free.to_vec()
    } else {
        return None;
    };
    let local: Vec<NodeId> = pool.iter().copied().filter(|n| preferred.contains(n)).collect();
    let pool = if local.is_empty() { pool } else { local };
    if let Some(rng) = st.rng.as_mut() {
        return pool.choose(rng).copied();
    }
    pool.into_iter()
        .min_by_key(|n| (st.busy_slots.get(n).copied().unwrap_or(0), *n))
}

enum Work {
    Map(InputSplit),
    Reduce(Vec<SpillSource>),
}

struct AttemptRun {
    shared: Arc<Shared>,
    job: JobId,
    spec: JobSpec,
    cache: Vec<CacheEntry>,
    kind: TaskKind,
    index: usize,
    attempt_no: u32,
    node: NodeId,
    cancel: CancelToken,
    jitter: Duration,
    work: Work,
}

impl AttemptRun {
    fn execute(self) {
        let shared = &self.shared;
        let scratch = shared.scratch_dir(&self.job, self.node, self.kind, self.index, self.attempt_no);
        let staged = {
            let _guard = shared.staging.lock().unwrap();
            ship_files(
                &self.cache,
                shared.dfs.as_ref(),
                &shared.config.work_root,
                &self.job,
                self.node,
            )
        };
        let outcome = match staged {
            Err(e) => match self.kind {
                TaskKind::Map => Outcome::Map(Err(e.into())),
                TaskKind::Reduce => Outcome::Reduce(Err(e.into())),
            },
            Ok(workdir) => {
                let ctx = AttemptContext {
                    dfs: &shared.dfs,
                    node: self.node,
                    attempt_no: self.attempt_no,
                    workdir: &workdir,
                    scratch: &scratch,
                    timeout: shared.config.worker_timeout,
                    cancel: self.cancel.clone(),
                };
                match &self.work {
                    Work::Map(split) => Outcome::Map(run_map_attempt(split, &self.spec, &ctx)),
                    Work::Reduce(sources) => {
                        Outcome::Reduce(run_reduce_attempt(self.index, &self.spec, sources, &ctx))
                    }
                }
            }
        };
        if !self.jitter.is_zero() {
            thread::sleep(self.jitter);
        }
        let mut st: MutexGuard<'_, State> = shared.state.lock().unwrap();
        st.events.push(Finished {
            job: self.job,
            kind: self.kind,
            index: self.index,
            attempt_no: self.attempt_no,
            node: self.node,
            outcome,
        });
        shared.wake.notify_all();
    }
}
