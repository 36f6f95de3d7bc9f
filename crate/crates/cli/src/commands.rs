use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use mrs_core::engine::{JobPhase, JobSpec};
use mrs_core::jobd::{Client, ClientError};

use crate::args::StreamingArgs;

pub const EXIT_OK: i32 = 0;
/// The daemon answered with an error, or the job failed.
pub const EXIT_FAILED: i32 = 1;
/// Transport, local I/O or usage errors.
pub const EXIT_CLIENT: i32 = 2;

pub const STAGING_ROOT: &str = "/_staging";

/// DFS paths without a leading slash are taken relative to the root.
pub fn dfs_path(p: &str) -> String {
    if p.starts_with('/') {
        p.to_owned()
    } else {
        format!("/{p}")
    }
}

fn exit_code(e: &ClientError) -> i32 {
    if e.is_daemon_error() {
        EXIT_FAILED
    } else {
        EXIT_CLIENT
    }
}

fn staging_dir() -> String {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or_default();
    format!("{STAGING_ROOT}/{}-{nanos}", std::process::id())
}

/// Uploads `-file` entries, submits, waits and reports. Returns the exit code.
pub fn run_streaming(args: &StreamingArgs, client: &Client, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let staging = staging_dir();
    let mut staged = Vec::with_capacity(args.files.len());
    let cleanup = |staged: &[String]| {
        for p in staged {
            let _ = client.delete(p);
        }
    };

    for local in &args.files {
        let Some(name) = Path::new(local).file_name().and_then(|n| n.to_str()) else {
            let _ = writeln!(err, "mrs: -file {local}: not a file path");
            cleanup(&staged);
            return EXIT_CLIENT;
        };
        let bytes = match fs::read(local) {
            Ok(b) => b,
            Err(e) => {
                let _ = writeln!(err, "mrs: -file {local}: {e}");
                cleanup(&staged);
                return EXIT_CLIENT;
            }
        };
        let remote = format!("{staging}/{name}");
        if let Err(e) = client.put(&remote, &bytes) {
            let _ = writeln!(err, "mrs: uploading {local}: {e}");
            cleanup(&staged);
            return exit_code(&e);
        }
        staged.push(remote);
    }

    let spec = JobSpec {
        input: dfs_path(&args.input),
        output: dfs_path(&args.output),
        mapper: args.mapper.clone(),
        reducer: args.reducer.clone(),
        files: staged.clone(),
        input_format: args.input_format.clone(),
        num_reducers: args.num_reduce_tasks,
        job_name: args.job_name.clone(),
    };
    let result = client.submit(&spec).and_then(|id| {
        let _ = writeln!(err, "mrs: submitted {id}");
        client.wait(&id, None)
    });
    cleanup(&staged);
    let status = match result {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "mrs: {e}");
            return exit_code(&e);
        }
    };

    let _ = writeln!(out, "{} maps={} reduces={}", status.phase, status.map_total, status.reduce_total);
    if status.phase == JobPhase::Succeeded {
        EXIT_OK
    } else {
        for d in &status.diagnostics {
            let _ = writeln!(err, "mrs: {d}");
        }
        EXIT_FAILED
    }
}

pub enum DfsCommand {
    Put { local: String, remote: String },
    Get { remote: String, local: String },
    Ls { prefix: String },
    Rm { path: String },
    Mv { src: String, dst: String },
}

pub fn run_dfs(cmd: &DfsCommand, client: &Client, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result: Result<(), (i32, String)> = (|| {
        let daemon = |e: ClientError| (exit_code(&e), e.to_string());
        match cmd {
            DfsCommand::Put { local, remote } => {
                let bytes = fs::read(local).map_err(|e| (EXIT_CLIENT, format!("{local}: {e}")))?;
                client.put(&dfs_path(remote), &bytes).map_err(daemon)?;
            }
            DfsCommand::Get { remote, local } => {
                let bytes = client.get(&dfs_path(remote)).map_err(daemon)?;
                fs::write(local, bytes).map_err(|e| (EXIT_CLIENT, format!("{local}: {e}")))?;
            }
            DfsCommand::Ls { prefix } => {
                for f in client.ls(&dfs_path(prefix)).map_err(daemon)? {
                    let _ = writeln!(out, "{}\t{}", f.path, f.length);
                }
            }
            DfsCommand::Rm { path } => client.delete(&dfs_path(path)).map_err(daemon)?,
            DfsCommand::Mv { src, dst } => client.rename(&dfs_path(src), &dfs_path(dst)).map_err(daemon)?,
        }
        Ok(())
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err((code, msg)) => {
            let _ = writeln!(err, "mrs: {msg}");
            code
        }
    }
}
