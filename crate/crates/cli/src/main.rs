use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use mrs_cli::{parse_streaming_args, run_dfs, run_streaming, DfsCommand, EXIT_CLIENT};
use mrs_core::config::{Config, DEFAULT_LISTEN};
use mrs_core::jobd::{Client, Daemon, Server};

#[derive(Parser)]
#[command(name = "mrs", version, about = "Streaming MapReduce on a miniature cluster")]
struct Cli {
    /// Daemon address
    #[arg(long, global = true, env = "MRS_DAEMON", default_value = DEFAULT_LISTEN)]
    daemon: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a streaming job: -input -output -mapper [-reducer] [-file]... [-numReduceTasks] [-inputformat] [-jobname]
    #[command(disable_help_flag = true)]
    Streaming {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        flags: Vec<String>,
    },
    /// File system operations
    #[command(subcommand)]
    Dfs(Dfs),
    /// Run the daemon in the foreground
    Jobd {
        /// TOML configuration file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides jobd.listen
        #[arg(long)]
        listen: Option<String>,
        /// Overrides jobd.data_dir
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Dfs {
    /// Copy a local file into the file system
    Put { local: String, remote: String },
    /// Copy a file out to the local disk
    Get { remote: String, local: String },
    /// List files under a prefix, one "path<TAB>length" per line
    Ls {
        #[arg(default_value = "/")]
        prefix: String,
    },
    /// Delete a file
    Rm { path: String },
    /// Rename a file
    Mv { src: String, dst: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let client = Client::new(cli.daemon);
    let (mut out, mut err) = (io::stdout(), io::stderr());
    let code = match cli.command {
        Command::Streaming { flags } => match parse_streaming_args(&flags) {
            Ok(args) => run_streaming(&args, &client, &mut out, &mut err),
            Err(e) => {
                let _ = writeln!(err, "mrs streaming: {e}");
                EXIT_CLIENT
            }
        },
        Command::Dfs(cmd) => {
            let cmd = match cmd {
                Dfs::Put { local, remote } => DfsCommand::Put { local, remote },
                Dfs::Get { remote, local } => DfsCommand::Get { remote, local },
                Dfs::Ls { prefix } => DfsCommand::Ls { prefix },
                Dfs::Rm { path } => DfsCommand::Rm { path },
                Dfs::Mv { src, dst } => DfsCommand::Mv { src, dst },
            };
            run_dfs(&cmd, &client, &mut out, &mut err)
        }
        Command::Jobd {
            config,
            listen,
            data_dir,
        } => serve(config, listen, data_dir),
    };
    ExitCode::from(code as u8)
}

fn serve(config: Option<PathBuf>, listen: Option<String>, data_dir: Option<PathBuf>) -> i32 {
    let fail = |msg: String| {
        eprintln!("mrs jobd: {msg}");
        EXIT_CLIENT
    };
    let mut config = match config {
        Some(path) => match Config::load(&path) {
            Ok(c) => c,
            Err(e) => return fail(e.to_string()),
        },
        None => Config::default(),
    };
    if let Some(l) = listen {
        config.jobd.listen = l;
    }
    if let Some(d) = data_dir {
        config.jobd.data_dir = d;
    }
    let daemon = match Daemon::start(&config) {
        Ok(d) => Arc::new(d),
        Err(e) => return fail(e.to_string()),
    };
    let server = match Server::bind(&config.jobd.listen, daemon) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", config.jobd.listen)),
    };
    match server.local_addr() {
        // first stdout line; scripts read the bound port from it
        Ok(addr) => println!("listening on {addr}"),
        Err(e) => return fail(e.to_string()),
    }
    let _ = io::stdout().flush();
    match server.serve() {
        Ok(()) => 0,
        Err(e) => fail(e.to_string()),
    }
}
