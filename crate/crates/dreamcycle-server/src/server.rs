//! TCP front end: one thread per connection, frames applied to the session
//! state machine in order. A violation sends one error frame and closes.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::core::ServerCore;
use crate::protocol::{read_frame, write_frame, Message, ProtoError};
use crate::session::{handle_frame, Session};

pub struct Server {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_handle: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds and starts accepting; `addr` may use port 0 for an ephemeral
    /// port (read the bound one back with `addr()`).
    pub fn start(core: Arc<ServerCore>, addr: &str) -> io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let bound = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let accept_handle = std::thread::spawn(move || loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    let core = Arc::clone(&core);
                    std::thread::spawn(move || serve_connection(stream, core));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if flag.load(Ordering::SeqCst) {
                        return;
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(_) => {
                    if flag.load(Ordering::SeqCst) {
                        return;
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
            }
        });
        Ok(Server {
            addr: bound,
            shutdown,
            accept_handle: Some(accept_handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting new connections and joins the accept loop. Already
    /// open connections finish on their own threads.
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
    }

    /// Blocks the calling thread until the accept loop exits.
    pub fn join(mut self) {
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(mut stream: TcpStream, core: Arc<ServerCore>) {
    let mut session = Session::new();
    loop {
        let msg = match read_frame(&mut stream) {
            Ok(m) => m,
            Err(ProtoError::Closed) => return,
            Err(e) => {
                let code = match e {
                    ProtoError::Oversize(_) => "oversize",
                    _ => "bad_frame",
                };
                let _ = write_frame(
                    &mut stream,
                    &Message::Error {
                        code: code.to_string(),
                        message: e.to_string(),
                    },
                );
                let _ = stream.shutdown(std::net::Shutdown::Both);
                return;
            }
        };
        let handled = handle_frame(&mut session, msg, &core);
        for out in &handled.responses {
            if write_frame(&mut stream, out).is_err() {
                return;
            }
        }
        if handled.close {
            let _ = stream.shutdown(std::net::Shutdown::Both);
            return;
        }
    }
}
