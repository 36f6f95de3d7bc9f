use std::io::{self, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::protocol::{self, Request, WireError};
use super::Daemon;

/// Accepts connections and answers one request per connection, each on its
/// own thread.
pub struct Server {
    listener: TcpListener,
    daemon: Arc<Daemon>,
}

impl Server {
    pub fn bind(addr: &str, daemon: Arc<Daemon>) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            daemon,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until the process exits.
    pub fn serve(self) -> io::Result<()> {
        let stop = AtomicBool::new(false);
        self.accept_loop(&stop)
    }

    /// Serves on a background thread until the handle is dropped.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let stop = stop.clone();
            thread::Builder::new()
                .name("mrs-jobd-accept".into())
                .spawn(move || {
                    if let Err(e) = self.accept_loop(&stop) {
                        log::error!("accept loop: {e}");
                    }
                })?
        };
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    fn accept_loop(&self, stop: &AtomicBool) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept: {e}");
                    continue;
                }
            };
            let daemon = self.daemon.clone();
            thread::Builder::new()
                .name("mrs-jobd-conn".into())
                .spawn(move || {
                    if let Err(e) = serve_connection(&daemon, stream) {
                        log::debug!("connection: {e}");
                    }
                })?;
        }
        Ok(())
    }
}

fn serve_connection(daemon: &Daemon, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let response = match protocol::read_frame(&mut reader) {
        Ok(None) => return Ok(()),
        Ok(Some(frame)) => match serde_json::from_slice::<Request>(&frame) {
            Ok(request) => daemon.handle(request),
            Err(e) => protocol::error_response(&WireError::bad_request(format!("malformed request: {e}"))),
        },
        Err(e) => protocol::error_response(&WireError::bad_request(e.to_string())),
    };
    protocol::write_frame(&mut writer, &response)
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wakes the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
