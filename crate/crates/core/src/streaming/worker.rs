use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::codec::{decode_worker_line, strip_newline, RECORD_SEPARATOR};
use super::StreamingError;
use crate::engine::Record;

/// Bytes of worker stderr retained for diagnostics.
pub const STDERR_TAIL_CAP: usize = 4 * 1024;

pub const DEFAULT_WORKER_TIMEOUT: Duration = Duration::from_secs(600);

/// Shared flag that stops every worker watching it.
#[derive(Clone, Default)]
pub struct CancelToken(Arc<CancelInner>);

#[derive(Default)]
struct CancelInner {
    cancelled: Mutex<bool>,
    cv: Condvar,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        *self.0.cancelled.lock().unwrap() = true;
        self.0.cv.notify_all();
    }

    pub fn is_cancelled(&self) -> bool {
        *self.0.cancelled.lock().unwrap()
    }

    fn wake(&self) {
        let _guard = self.0.cancelled.lock().unwrap();
        self.0.cv.notify_all();
    }
}

impl std::fmt::Debug for CancelToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("CancelToken")
            .field(&self.is_cancelled())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub env: Vec<(String, String)>,
    pub timeout: Duration,
    pub cancel: Option<CancelToken>,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self {
            env: Vec::new(),
            timeout: DEFAULT_WORKER_TIMEOUT,
            cancel: None,
        }
    }
}

impl WorkerOptions {
    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn cancel(mut self, token: CancelToken) -> Self {
        self.cancel = Some(token);
        self
    }
}

/// How a worker process ended, once it ran to completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerExit {
    pub exit_code: i32,
    pub stderr_tail: Vec<u8>,
}

impl WorkerExit {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerResult {
    pub records: Vec<Record>,
    pub exit_code: i32,
    pub stderr_tail: Vec<u8>,
}

impl WorkerResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }
}

/// Runs `cmd` and collects its decoded stdout records.
///
/// A nonzero exit is reported through `exit_code` with `records` emptied;
/// spawn failures, timeouts, cancellation and broken pipes are errors.
pub fn spawn_worker<I>(
    cmd: &str,
    stdin_lines: I,
    workdir: &Path,
    opts: &WorkerOptions,
) -> Result<WorkerResult, StreamingError>
where
    I: IntoIterator,
    I::Item: AsRef<[u8]>,
    I::IntoIter: Send,
{
    let mut records = Vec::new();
    let exit = run_worker(cmd, stdin_lines, workdir, opts, |line| {
        records.push(decode_worker_line(strip_newline(line)));
        Ok(())
    })?;
    if !exit.success() {
        records.clear();
    }
    Ok(WorkerResult {
        records,
        exit_code: exit.exit_code,
        stderr_tail: exit.stderr_tail,
    })
}

/// Splits a command line on ASCII whitespace. No quoting is interpreted.
pub fn split_command(cmd: &str) -> Result<Vec<String>, StreamingError> {
    let argv: Vec<String> = cmd.split_ascii_whitespace().map(str::to_owned).collect();
    if argv.is_empty() {
        return Err(StreamingError::EmptyCommand);
    }
    Ok(argv)
}

/// A program whose base name was staged into `workdir` runs from there;
/// otherwise the name is used as given (absolute path or `PATH` lookup).
pub fn resolve_program(program: &str, workdir: &Path) -> PathBuf {
    if let Some(base) = Path::new(program).file_name() {
        let staged = workdir.join(base);
        if staged.is_file() {
            return staged;
        }
    }
    PathBuf::from(program)
}

/// Core driver: feeds `stdin_lines` (newline appended to each) while handing
/// every raw stdout line to `on_line`. Lines keep their newline; only a final
/// unterminated line arrives without one. Stdin feeding, stdout
/// draining and stderr draining run concurrently.
pub fn run_worker<I, F>(
    cmd: &str,
    stdin_lines: I,
    workdir: &Path,
    opts: &WorkerOptions,
    mut on_line: F,
) -> Result<WorkerExit, StreamingError>
where
    I: IntoIterator,
    I::Item: AsRef<[u8]>,
    I::IntoIter: Send,
    F: FnMut(&[u8]) -> Result<(), StreamingError>,
{
    let argv = split_command(cmd)?;
    let workdir = workdir
        .canonicalize()
        .map_err(|e| StreamingError::Io(format!("workdir {}: {e}", workdir.display())))?;
    let program = resolve_program(&argv[0], &workdir);

    let mut command = Command::new(&program);
    command
        .args(&argv[1..])
        .current_dir(&workdir)
        .envs(opts.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);

    let mut child = spawn_retrying(&mut command).map_err(|source| StreamingError::SpawnFailed {
        program: program.display().to_string(),
        reason: source.to_string(),
    })?;
    let pgid = child.id() as libc::pid_t;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");

    let token = opts.cancel.clone().unwrap_or_default();
    let done = AtomicBool::new(false);
    let deadline = Instant::now() + opts.timeout;
    let input = stdin_lines.into_iter();

    let outcome = thread::scope(|s| {
        let feeder = s.spawn(move || feed(stdin, input));
        let drainer = s.spawn(move || capture_tail(stderr));
        let watchdog = s.spawn(|| watch(&token, &done, deadline, pgid));

        let mut sink_error = None;
        let mut read_error = None;
        let mut reader = BufReader::new(stdout);
        let mut buf = Vec::with_capacity(256);
        loop {
            buf.clear();
            match reader.read_until(RECORD_SEPARATOR, &mut buf) {
                Ok(0) => break,
                Ok(_) => {
                    if sink_error.is_none() {
                        if let Err(e) = on_line(&buf) {
                            sink_error = Some(e);
                            kill_group(pgid);
                        }
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    read_error = Some(e);
                    kill_group(pgid);
                    break;
                }
            }
        }
        drop(reader);
        let status = wait_child(&mut child);
        done.store(true, Ordering::SeqCst);
        token.wake();

        let fed = feeder.join().expect("stdin feeder panicked");
        let stderr_tail = drainer.join().expect("stderr drainer panicked");
        let stopped = watchdog.join().expect("watchdog panicked");
        (status, fed, stderr_tail, stopped, sink_error, read_error)
    });
    let (status, fed, stderr_tail, stopped, sink_error, read_error) = outcome;

    match stopped {
        Some(Stop::Cancelled) => return Err(StreamingError::Cancelled),
        Some(Stop::Timeout) => return Err(StreamingError::Timeout(opts.timeout)),
        None => {}
    }
    if let Some(e) = sink_error {
        return Err(e);
    }
    let status = status.map_err(|e| StreamingError::Io(format!("wait: {e}")))?;
    if let Some(e) = read_error {
        return Err(StreamingError::Io(format!("worker stdout: {e}")));
    }
    let exit_code = exit_code(status);
    if exit_code == 0 {
        match fed {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => {
                return Err(StreamingError::BrokenPipe)
            }
            Err(e) => return Err(StreamingError::Io(format!("worker stdin: {e}"))),
        }
    }
    Ok(WorkerExit {
        exit_code,
        stderr_tail,
    })
}

fn spawn_retrying(command: &mut Command) -> io::Result<Child> {
    // A script staged by another thread can be briefly held open for writing
    // by a sibling fork that has not exec'd yet.
    let mut delay = Duration::from_millis(5);
    for _ in 0..8 {
        match command.spawn() {
            Err(e) if e.raw_os_error() == Some(libc::ETXTBSY) => {
                thread::sleep(delay);
                delay *= 2;
            }
            other => return other,
        }
    }
    command.spawn()
}

fn feed<W: Write, I>(stdin: W, lines: I) -> io::Result<()>
where
    I: Iterator,
    I::Item: AsRef<[u8]>,
{
    let mut w = BufWriter::with_capacity(64 * 1024, stdin);
    for line in lines {
        w.write_all(line.as_ref())?;
        w.write_all(&[RECORD_SEPARATOR])?;
    }
    w.flush()
}

fn capture_tail<R: Read>(mut stderr: R) -> Vec<u8> {
    let mut tail = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        match stderr.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                tail.extend_from_slice(&chunk[..n]);
                if tail.len() > 2 * STDERR_TAIL_CAP {
                    tail.drain(..tail.len() - STDERR_TAIL_CAP);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    if tail.len() > STDERR_TAIL_CAP {
        tail.drain(..tail.len() - STDERR_TAIL_CAP);
    }
    tail
}

enum Stop {
    Cancelled,
    Timeout,
}

fn watch(token: &CancelToken, done: &AtomicBool, deadline: Instant, pgid: libc::pid_t) -> Option<Stop> {
    let mut cancelled = token.0.cancelled.lock().unwrap();
    loop {
        if done.load(Ordering::SeqCst) {
            return None;
        }
        if *cancelled {
            kill_group(pgid);
            return Some(Stop::Cancelled);
        }
        let now = Instant::now();
        if now >= deadline {
            kill_group(pgid);
            return Some(Stop::Timeout);
        }
        cancelled = token.0.cv.wait_timeout(cancelled, deadline - now).unwrap().0;
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: plain syscall on a process group we created; errors (already
    // exited) are irrelevant.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn wait_child(child: &mut Child) -> io::Result<ExitStatus> {
    loop {
        match child.wait() {
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            other => return other,
        }
    }
}

fn exit_code(status: ExitStatus) -> i32 {
    match (status.code(), status.signal()) {
        (Some(code), _) => code,
        (None, Some(sig)) => 128 + sig,
        (None, None) => -1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::os::unix::fs::PermissionsExt;

    fn script(dir: &Path, name: &str, body: &str) {
        let path = dir.join(name);
        fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    }

    fn rec(k: &str, v: &str) -> Record {
        Record::new(k.as_bytes(), v.as_bytes())
    }

    #[test]
    fn cat_passes_lines_through() {
        let dir = tempfile::tempdir().unwrap();
        let out = spawn_worker("cat", ["a\tb"], dir.path(), &WorkerOptions::default()).unwrap();
        assert_eq!(out.exit_code, 0);
        assert_eq!(out.records, vec![rec("a", "b")]);
    }

    #[test]
    fn nonzero_exit_discards_records() {
        let dir = tempfile::tempdir().unwrap();
        script(dir.path(), "fail.sh", "echo partial; echo oops >&2; exit 1");
        let out = spawn_worker("fail.sh", Vec::<&[u8]>::new(), dir.path(), &WorkerOptions::default())
            .unwrap();
        assert_eq!(out.exit_code, 1);
        assert!(out.records.is_empty());
        assert_eq!(out.stderr_tail, b"oops\n");
    }

    #[test]
    fn staged_basename_wins_over_given_path() {
        let dir = tempfile::tempdir().unwrap();
        script(dir.path(), "map.R", "echo staged");
        let out = spawn_worker(
            "/home/tst/src/map.R",
            Vec::<&[u8]>::new(),
            dir.path(),
            &WorkerOptions::default(),
        )
        .unwrap();
        assert_eq!(out.records, vec![rec("staged", "")]);
    }

    #[test]
    fn missing_program_is_spawn_failure() {
        let dir = tempfile::tempdir().unwrap();
        let err = spawn_worker(
            "/definitely/not/here",
            Vec::<&[u8]>::new(),
            dir.path(),
            &WorkerOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, StreamingError::SpawnFailed { .. }), "{err:?}");
        assert!(matches!(
            spawn_worker("  ", Vec::<&[u8]>::new(), dir.path(), &WorkerOptions::default()),
            Err(StreamingError::EmptyCommand)
        ));
    }

    #[test]
    fn hung_worker_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let opts = WorkerOptions::default().timeout(Duration::from_millis(200));
        let started = Instant::now();
        let err = spawn_worker("sleep 30", Vec::<&[u8]>::new(), dir.path(), &opts).unwrap_err();
        assert!(matches!(err, StreamingError::Timeout(_)));
        assert!(started.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn cancel_stops_worker() {
        let dir = tempfile::tempdir().unwrap();
        let token = CancelToken::new();
        let opts = WorkerOptions::default().cancel(token.clone());
        let canceller = thread::spawn(move || {
            thread::sleep(Duration::from_millis(100));
            token.cancel();
        });
        let err = spawn_worker("sleep 30", Vec::<&[u8]>::new(), dir.path(), &opts).unwrap_err();
        canceller.join().unwrap();
        assert!(matches!(err, StreamingError::Cancelled));
    }

    #[test]
    fn early_exit_without_reading_is_broken_pipe() {
        let dir = tempfile::tempdir().unwrap();
        let big = vec![vec![b'x'; 1024]; 4096];
        let err = spawn_worker("true", big, dir.path(), &WorkerOptions::default()).unwrap_err();
        assert!(matches!(err, StreamingError::BrokenPipe), "{err:?}");
    }

    #[test]
    fn large_interleaved_io_does_not_deadlock() {
        // cat echoes while we are still writing; both pipes exceed their buffers.
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<Vec<u8>> = (0..200_000).map(|i| format!("k{i}\tv").into_bytes()).collect();
        let mut n = 0usize;
        let exit = run_worker("cat", lines.iter(), dir.path(), &WorkerOptions::default(), |_| {
            n += 1;
            Ok(())
        })
        .unwrap();
        assert!(exit.success());
        assert_eq!(n, 200_000);
    }

    #[test]
    fn environment_reaches_worker() {
        let dir = tempfile::tempdir().unwrap();
        script(dir.path(), "env.sh", "printf '%s\\t%s\\n' \"$MRS_TASK_KIND\" \"$MRS_TASK_INDEX\"");
        let opts = WorkerOptions::default()
            .env("MRS_TASK_KIND", "map")
            .env("MRS_TASK_INDEX", "7");
        let out = spawn_worker("env.sh", Vec::<&[u8]>::new(), dir.path(), &opts).unwrap();
        assert_eq!(out.records, vec![rec("map", "7")]);
    }

    #[test]
    fn stderr_tail_is_capped() {
        let dir = tempfile::tempdir().unwrap();
        script(dir.path(), "noisy.sh", "i=0; while [ $i -lt 3000 ]; do echo 0123456789 >&2; i=$((i+1)); done");
        let out = spawn_worker("noisy.sh", Vec::<&[u8]>::new(), dir.path(), &WorkerOptions::default())
            .unwrap();
        assert_eq!(out.stderr_tail.len(), STDERR_TAIL_CAP);
        assert!(out.stderr_tail.ends_with(b"0123456789\n"));
    }
}
