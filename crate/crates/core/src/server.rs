//! Threaded TCP stream server. One thread per connection; sessions are
//! keyed by the `session` field of each request, so a session may span
//! connections while its frames are still handled one at a time.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use thiserror::Error;

use crate::engine::{Engine, LogEvent, SessionContext};
use crate::protocol::{read_message, request_frame, split_payload, write_message, ProtocolError, WireResponse};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

type EventSink = Arc<Mutex<Box<dyn Write + Send>>>;

/// Live session contexts, one per session id.
#[derive(Default)]
pub struct SessionRegistry {
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionContext>>>>,
}

impl fmt::Debug for SessionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionRegistry")
            .field("sessions", &self.session_ids())
            .finish()
    }
}

impl SessionRegistry {
    pub fn get_or_create(&self, session_id: &str) -> Arc<Mutex<SessionContext>> {
        let mut map = self.sessions.lock().expect("registry poisoned");
        map.entry(session_id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(SessionContext::new(session_id))))
            .clone()
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .lock()
            .expect("registry poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Events retained for a session (empty when an event sink is set).
    pub fn events(&self, session_id: &str) -> Vec<LogEvent> {
        let ctx = self
            .sessions
            .lock()
            .expect("registry poisoned")
            .get(session_id)
            .cloned();
        ctx.map(|c| c.lock().expect("session poisoned").events().to_vec())
            .unwrap_or_default()
    }
}

pub struct Server {
    listener: TcpListener,
    engine: Arc<Engine>,
    registry: Arc<SessionRegistry>,
    sink: Option<EventSink>,
    shutdown: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs + fmt::Display, engine: Arc<Engine>) -> Result<Self, ServerError> {
        let listener = TcpListener::bind(&addr).map_err(|source| ServerError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
        Ok(Self {
            listener,
            engine,
            registry: Arc::default(),
            sink: None,
            shutdown: Arc::default(),
        })
    }

    /// Stream events as JSON lines to `sink` instead of keeping them in
    /// memory.
    pub fn with_event_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.sink = Some(Arc::new(Mutex::new(sink)));
        self
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn registry(&self) -> Arc<SessionRegistry> {
        self.registry.clone()
    }

    /// Accept connections until shut down through a [`ServerHandle`].
    pub fn run(self) -> Result<(), ServerError> {
        for conn in self.listener.incoming() {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!("accept failed: {e}");
                    continue;
                }
            };
            let engine = self.engine.clone();
            let registry = self.registry.clone();
            let sink = self.sink.clone();
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(stream, &engine, &registry, sink.as_ref()) {
                    tracing::debug!(?peer, "connection closed: {e}");
                }
            });
        }
        Ok(())
    }

    /// Run on a background thread.
    pub fn spawn(self) -> Result<ServerHandle, ServerError> {
        let addr = self.local_addr()?;
        let shutdown = self.shutdown.clone();
        let registry = self.registry.clone();
        let thread = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            shutdown,
            registry,
            thread,
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    registry: Arc<SessionRegistry>,
    thread: JoinHandle<Result<(), ServerError>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn registry(&self) -> &SessionRegistry {
        &self.registry
    }

    /// Stop accepting connections. Open connections finish on their own.
    pub fn shutdown(self) -> Result<(), ServerError> {
        self.shutdown.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        self.thread.join().expect("server thread panicked")
    }
}

fn serve_connection(
    stream: TcpStream,
    engine: &Engine,
    registry: &SessionRegistry,
    sink: Option<&EventSink>,
) -> Result<(), ProtocolError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let payload = match read_message(&mut reader) {
            Ok(Some(p)) => p,
            Ok(None) => return Ok(()),
            Err(e @ ProtocolError::PayloadTooLarge { .. }) => {
                // the stream position is lost; report and hang up
                write_message(&mut writer, &WireResponse::error(&e).to_json())?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let response = match handle_payload(&payload, engine, registry, sink) {
            Ok(r) => r,
            Err(e) => {
                tracing::debug!("rejected request: {e}");
                WireResponse::error(&e)
            }
        };
        write_message(&mut writer, &response.to_json())?;
    }
}

fn handle_payload(
    payload: &[u8],
    engine: &Engine,
    registry: &SessionRegistry,
    sink: Option<&EventSink>,
) -> Result<WireResponse, ProtocolError> {
    let (header, image) = split_payload(payload)?;
    let frame = request_frame(&header, image)?;
    let ctx = registry.get_or_create(&header.session);
    let mut ctx = ctx.lock().expect("session poisoned");
    let response = engine.handle_frame(&mut ctx, &frame);
    if let Some(sink) = sink {
        // still holding the session lock keeps each session's lines ordered
        let events = ctx.take_events();
        let mut out = sink.lock().expect("sink poisoned");
        for ev in &events {
            serde_json::to_writer(&mut *out, ev).map_err(io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    Ok(WireResponse::from(&response))
}
