//! Thread-per-connection TCP server.

use super::api::{Api, EVENTS_PATH};
use super::wire::{Event, Method, Request, Response, WireError};
use crate::notify::Notification;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// Idle streams emit a heartbeat this often; a failed write ends the stream.
pub const HEARTBEAT: Duration = Duration::from_secs(15);

pub trait Service: Send + Sync + 'static {
    fn handle(&self, req: &Request) -> Response;

    /// `None` when the request is not a stream request.
    fn open_stream(&self, _req: &Request) -> Option<Result<Receiver<Notification>, Response>> {
        None
    }
}

impl Service for Api {
    fn handle(&self, req: &Request) -> Response {
        self.dispatch(req)
    }

    fn open_stream(&self, req: &Request) -> Option<Result<Receiver<Notification>, Response>> {
        (req.method == Method::Get && req.path == EVENTS_PATH)
            .then(|| self.subscribe(req).map_err(|e| e.into_response()))
    }
}

pub struct Server {
    listener: TcpListener,
    service: Arc<dyn Service>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, service: Arc<dyn Service>) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            service,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the process exits.
    pub fn serve(self) -> std::io::Result<()> {
        self.accept_loop(&AtomicBool::new(false))
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> std::io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let join = std::thread::spawn(move || {
            let _ = self.accept_loop(&flag);
        });
        Ok(ServerHandle {
            addr,
            stop,
            join: Some(join),
        })
    }

    fn accept_loop(&self, stop: &AtomicBool) -> std::io::Result<()> {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::Acquire) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let service = self.service.clone();
            std::thread::spawn(move || serve_connection(stream, service.as_ref()));
        }
        Ok(())
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// Stops accepting; open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::Release);
        let _ = TcpStream::connect(self.addr);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

fn serve_connection(stream: TcpStream, service: &dyn Service) {
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    loop {
        let req = match Request::read_from(&mut reader) {
            Ok(r) => r,
            Err(WireError::Closed | WireError::Io(_)) => return,
            Err(e) => {
                let body = serde_json::json!({ "error": { "code": "bad-frame", "message": e.to_string() } });
                let _ = Response::json(400, &body).write_to(&mut writer);
                return;
            }
        };
        match service.open_stream(&req) {
            Some(Ok(rx)) => return stream_events(&mut writer, rx),
            Some(Err(resp)) => {
                if resp.write_to(&mut writer).is_err() {
                    return;
                }
            }
            None => {
                if service.handle(&req).write_to(&mut writer).is_err() {
                    return;
                }
            }
        }
    }
}

fn stream_events(w: &mut impl std::io::Write, rx: Receiver<Notification>) {
    let opened = Response::json(200, &serde_json::json!({ "stream": "notifications" }));
    if opened.write_to(w).is_err() {
        return;
    }
    loop {
        let event = match rx.recv_timeout(HEARTBEAT) {
            Ok(n) => Event {
                kind: "notification".into(),
                body: serde_json::to_vec(&n).expect("notification serializes"),
            },
            Err(RecvTimeoutError::Timeout) => Event {
                kind: "heartbeat".into(),
                body: b"{}".to_vec(),
            },
            Err(RecvTimeoutError::Disconnected) => return,
        };
        if event.write_to(w).is_err() {
            return;
        }
    }
}
