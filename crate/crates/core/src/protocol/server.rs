use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};

use super::{ProtoError, Response, Session, SessionConfig, Verb};
use crate::catalog::Catalog;

/// Shared by every connection of one server: the catalog and the session
/// budget.
#[derive(Clone, Debug)]
pub struct ServerContext {
    pub catalog: Arc<Catalog>,
    pub session_limit: usize,
    active: Arc<AtomicUsize>,
}

impl ServerContext {
    pub fn new(catalog: Arc<Catalog>, session_limit: usize) -> ServerContext {
        ServerContext { catalog, session_limit, active: Arc::new(AtomicUsize::new(0)) }
    }

    pub fn active_sessions(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    fn acquire(&self) -> Option<SessionSlot> {
        let mut cur = self.active.load(Ordering::SeqCst);
        loop {
            if cur >= self.session_limit {
                return None;
            }
            match self.active.compare_exchange(cur, cur + 1, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return Some(SessionSlot { active: self.active.clone() }),
                Err(seen) => cur = seen,
            }
        }
    }
}

/// Releases its place in the session budget when dropped.
#[derive(Debug)]
struct SessionSlot {
    active: Arc<AtomicUsize>,
}

impl Drop for SessionSlot {
    fn drop(&mut self) {
        self.active.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Protocol state of one client connection. Transport-free: feed it lines,
/// write back what it returns.
#[derive(Debug)]
pub struct Connection {
    ctx: ServerContext,
    session: Option<(Session, SessionSlot)>,
    last_request_id: Option<u64>,
}

impl Connection {
    pub fn new(ctx: ServerContext) -> Connection {
        Connection { ctx, session: None, last_request_id: None }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref().map(|(s, _)| s)
    }

    /// Response line first, then any push lines.
    pub fn handle_line(&mut self, line: &str) -> Vec<String> {
        let mut out = vec![self.respond(line).to_line()];
        if let Some((s, _)) = &mut self.session {
            for p in s.take_pushes() {
                out.push(serde_json::to_string(&p).expect("push serializes"));
            }
        }
        out
    }

    fn respond(&mut self, line: &str) -> Response {
        let doc: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return Response::err(None, ProtoError::new("MalformedRequest", e.to_string())),
        };
        let id = doc.get("request_id").and_then(Value::as_u64);
        let Some(obj) = doc.as_object() else {
            return Response::err(None, ProtoError::new("MalformedRequest", "request must be an object"));
        };
        let Some(request_id) = id else {
            return Response::err(None, ProtoError::new("MalformedRequest", "missing integer request_id"));
        };
        if let Some(last) = self.last_request_id {
            if request_id <= last {
                return Response::err(
                    Some(request_id),
                    ProtoError::new("NonMonotonicRequestId", format!("request_id must exceed {last}")),
                );
            }
        }
        self.last_request_id = Some(request_id);
        let Some(verb) = obj.get("verb").and_then(Value::as_str) else {
            return Response::err(Some(request_id), ProtoError::new("MalformedRequest", "missing verb"));
        };
        for k in obj.keys() {
            if !matches!(k.as_str(), "request_id" | "verb" | "payload") {
                return Response::err(Some(request_id), ProtoError::new("MalformedRequest", format!("unknown field `{k}`")));
            }
        }
        let verb: Verb = match verb.parse() {
            Ok(v) => v,
            Err(e) => return Response::err(Some(request_id), e),
        };
        let payload = obj.get("payload").cloned().unwrap_or(Value::Null);
        match self.execute(verb, &payload) {
            Ok(v) => Response::ok(request_id, v),
            Err(e) => Response::err(Some(request_id), e),
        }
    }

    fn execute(&mut self, verb: Verb, payload: &Value) -> Result<Value, ProtoError> {
        if verb == Verb::CreateSession {
            if self.session.is_some() {
                return Err(ProtoError::new("SessionExists", "this connection already has a session"));
            }
            let config: SessionConfig = if payload.is_null() {
                SessionConfig::default()
            } else {
                serde_json::from_value(payload.clone()).map_err(|e| ProtoError::bad_request(format!("payload: {e}")))?
            };
            let slot = self.ctx.acquire().ok_or_else(|| ProtoError::new("Busy", "session limit reached"))?;
            let session = Session::create(self.ctx.catalog.clone(), config)?;
            let reply = json!({ "tick": session.scene().tick, "hash": session.state_hash_hex() });
            self.session = Some((session, slot));
            return Ok(reply);
        }
        let (session, _) = self.session.as_mut().ok_or_else(|| ProtoError::new("NoSession", "send CreateSession first"))?;
        session.handle(verb, payload)
    }
}

/// A listening TCP service. Dropping it does not stop the server; call
/// [`ServerHandle::shutdown`].
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("cannot bind {addr}: {source}")]
pub struct BindFailure {
    pub addr: String,
    #[source]
    pub source: io::Error,
}

impl BindFailure {
    pub fn code(&self) -> &'static str {
        "BindFailure"
    }
}

/// Newline-delimited JSON over TCP, one thread per connection.
pub fn serve(addr: impl ToSocketAddrs + std::fmt::Debug, ctx: ServerContext) -> Result<ServerHandle, BindFailure> {
    let name = format!("{addr:?}");
    let listener = TcpListener::bind(addr).map_err(|source| BindFailure { addr: name.clone(), source })?;
    let local = listener.local_addr().map_err(|source| BindFailure { addr: name.clone(), source })?;
    listener.set_nonblocking(true).map_err(|source| BindFailure { addr: name, source })?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = stop.clone();
    let thread = thread::spawn(move || {
        while !stop2.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let ctx = ctx.clone();
                    thread::spawn(move || {
                        let _ = handle_stream(stream, ctx);
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(_) => thread::sleep(Duration::from_millis(10)),
            }
        }
    });
    Ok(ServerHandle { addr: local, stop, thread: Some(thread) })
}

fn handle_stream(stream: TcpStream, ctx: ServerContext) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    run_lines(reader, &mut writer, ctx)
}

fn run_lines<R: BufRead, W: Write>(reader: R, writer: &mut W, ctx: ServerContext) -> io::Result<()> {
    let mut conn = Connection::new(ctx);
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            // Invalid UTF-8 is answered like any other malformed line.
            Err(e) if e.kind() == io::ErrorKind::InvalidData => String::from("\u{0}"),
            Err(e) => return Err(e),
        };
        if line.trim().is_empty() {
            continue;
        }
        for out in conn.handle_line(&line) {
            writer.write_all(out.as_bytes())?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// Serves a single connection on stdin/stdout until EOF.
pub fn serve_stdio(ctx: ServerContext) -> io::Result<()> {
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    run_lines(stdin.lock(), &mut stdout, ctx)
}
