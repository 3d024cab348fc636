//! Network endpoint. One TCP port carries the binary protocol, the same protocol inside
//! WebSocket binary frames, static files, and JSON uploads of annotations and judgments.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tungstenite::WebSocket;

use super::message::{read_message, write_message, ActionChunk, EndReason, Message, Role, SessionConfig, MESSAGE_MAGIC, PROTOCOL_VERSION};
use super::session::{SessionCore, SessionOutcome};
use super::trajectory::SegmentSource;
use crate::datapipe::parse_annotations;
use crate::evalharness::{aggregate_all, parse_judgments, EpisodeEvaluator};
use crate::worldcore::{instantiate_task, TaskSpec, WorldId, WorldState, DEFAULT_BUDGET_TICKS};
use crate::worlds::layouts;

pub const SERVER_NAME: &str = "simkit";
const MAX_BODY: usize = 16 << 20;
const POLL: Duration = Duration::from_millis(1);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Served under `/`; none disables static files.
    pub static_dir: Option<PathBuf>,
    /// Recorded trajectories and the session log.
    pub trajectory_dir: PathBuf,
    /// Uploaded annotations and judgments.
    pub upload_dir: PathBuf,
    /// Used until a client sends its own SessionConfig.
    pub session: SessionConfig,
    pub tasks: Vec<TaskSpec>,
    /// Budget for free play (Reset without a task).
    pub free_budget: u64,
}

impl ServerConfig {
    pub fn new(addr: SocketAddr, data_dir: &Path, tasks: Vec<TaskSpec>) -> Self {
        ServerConfig {
            addr,
            static_dir: None,
            trajectory_dir: data_dir.join("trajectories"),
            upload_dir: data_dir.join("uploads"),
            session: SessionConfig::default(),
            tasks,
            free_budget: 3000,
        }
    }
}

/// One line of `sessions.jsonl`.
#[derive(Debug, Clone, Serialize)]
struct EpisodeLog {
    session: u64,
    episode: u64,
    file: Option<String>,
    task_id: Option<String>,
    seed: u64,
    role: &'static str,
    status: &'static str,
    end_reason: &'static str,
    ticks: u64,
    on_time: f64,
    overruns: u64,
}

struct Shared {
    config: ServerConfig,
    shutdown: AtomicBool,
    sessions: AtomicU64,
    log: Mutex<()>,
}

/// Stops a running server; sessions in progress end with a disconnect and are flushed.
#[derive(Clone)]
pub struct ShutdownHandle(Arc<Shared>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.shutdown.store(true, Ordering::SeqCst);
    }
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    pub fn bind(config: ServerConfig) -> io::Result<Server> {
        std::fs::create_dir_all(&config.trajectory_dir)?;
        std::fs::create_dir_all(&config.upload_dir)?;
        let listener = TcpListener::bind(config.addr)?;
        listener.set_nonblocking(true)?;
        Ok(Server {
            listener,
            shared: Arc::new(Shared {
                config,
                shutdown: AtomicBool::new(false),
                sessions: AtomicU64::new(0),
                log: Mutex::new(()),
            }),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle(self.shared.clone())
    }

    /// Accepts until shut down, then waits for every connection to finish.
    pub fn run(self) -> io::Result<()> {
        let mut workers = Vec::new();
        while !self.shared.shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    let shared = self.shared.clone();
                    workers.push(std::thread::spawn(move || {
                        if let Err(e) = handle_connection(stream, &shared) {
                            log::debug!("connection {peer}: {e}");
                        }
                    }));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(e),
            }
            workers.retain(|w| !w.is_finished());
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut head = [0u8; 4];
    let mut n = 0;
    while n < 4 {
        n = stream.peek(&mut head)?;
        if n == 0 {
            return Ok(());
        }
        if n < 4 {
            std::thread::sleep(POLL);
        }
    }
    if &head == MESSAGE_MAGIC {
        stream.set_read_timeout(None)?;
        let mut wire = TcpWire::new(stream)?;
        return serve_session(&mut wire, shared);
    }
    let request = read_request(&stream)?;
    if request.is_websocket() {
        // tungstenite reads the handshake again from the replayed head.
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        let mut replay = request.raw;
        replay.extend_from_slice(&request.body);
        let ws = tungstenite::accept(Prefixed {
            prefix: io::Cursor::new(replay),
            stream: stream.try_clone()?,
        })
        .map_err(|e| io::Error::other(e.to_string()))?;
        stream.set_read_timeout(Some(POLL))?;
        let mut wire = WsWire { ws };
        return serve_session(&mut wire, shared);
    }
    let mut stream = stream;
    let response = route(&request, shared);
    response.write(&mut stream)
}

/// Reads a prefix buffer before the underlying stream; writes go to the stream.
struct Prefixed {
    prefix: io::Cursor<Vec<u8>>,
    stream: TcpStream,
}

impl Read for Prefixed {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.prefix.read(buf)?;
        if n > 0 {
            return Ok(n);
        }
        self.stream.read(buf)
    }
}

impl Write for Prefixed {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.stream.write(buf)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.stream.flush()
    }
}

// ---------------------------------------------------------------- HTTP

struct Request {
    method: String,
    path: String,
    headers: Vec<(String, String)>,
    raw: Vec<u8>,
    body: Vec<u8>,
}

impl Request {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    fn is_websocket(&self) -> bool {
        self.header("upgrade").is_some_and(|v| v.eq_ignore_ascii_case("websocket"))
    }
}

fn read_request(mut stream: &TcpStream) -> io::Result<Request> {
    let mut raw = Vec::new();
    let mut buf = [0u8; 4096];
    loop {
        let n = stream.read(&mut buf)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed in request head"));
        }
        raw.extend_from_slice(&buf[..n]);
        let mut headers = [httparse::EMPTY_HEADER; 64];
        let mut req = httparse::Request::new(&mut headers);
        match req.parse(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))? {
            httparse::Status::Partial => {
                if raw.len() > 64 << 10 {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "request head too large"));
                }
            }
            httparse::Status::Complete(len) => {
                let headers: Vec<(String, String)> = req
                    .headers
                    .iter()
                    .map(|h| (h.name.to_string(), String::from_utf8_lossy(h.value).into_owned()))
                    .collect();
                let mut request = Request {
                    method: req.method.unwrap_or("").to_string(),
                    path: req.path.unwrap_or("/").to_string(),
                    headers,
                    raw: raw[..len].to_vec(),
                    body: raw[len..].to_vec(),
                };
                if !request.is_websocket() {
                    let want: usize = request.header("content-length").and_then(|v| v.trim().parse().ok()).unwrap_or(0);
                    if want > MAX_BODY {
                        return Err(io::Error::new(io::ErrorKind::InvalidData, "body too large"));
                    }
                    while request.body.len() < want {
                        let n = stream.read(&mut buf)?;
                        if n == 0 {
                            break;
                        }
                        request.body.extend_from_slice(&buf[..n]);
                    }
                    request.body.truncate(want);
                }
                return Ok(request);
            }
        }
    }
}

struct Response {
    status: u16,
    content_type: &'static str,
    body: Vec<u8>,
}

impl Response {
    fn json(status: u16, value: &serde_json::Value) -> Self {
        Response {
            status,
            content_type: "application/json",
            body: value.to_string().into_bytes(),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Response::json(status, &serde_json::json!({ "error": message.into() }))
    }

    fn write(&self, stream: &mut TcpStream) -> io::Result<()> {
        let reason = match self.status {
            200 => "OK",
            400 => "Bad Request",
            404 => "Not Found",
            405 => "Method Not Allowed",
            _ => "Internal Server Error",
        };
        write!(
            stream,
            "HTTP/1.1 {} {reason}\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            self.status,
            self.content_type,
            self.body.len()
        )?;
        stream.write_all(&self.body)?;
        stream.flush()
    }
}

fn route(req: &Request, shared: &Shared) -> Response {
    let path = req.path.split('?').next().unwrap_or("/");
    match (req.method.as_str(), path) {
        ("POST", "/upload/annotations") => upload_annotations(&req.body, shared),
        ("POST", "/upload/judgments") => upload_judgments(&req.body, shared),
        ("GET", "/api/tasks") => {
            let tasks: Vec<_> = shared
                .config
                .tasks
                .iter()
                .map(|t| serde_json::json!({ "task_id": t.task_id, "world": t.world_id, "instruction": t.instruction }))
                .collect();
            Response::json(200, &serde_json::Value::Array(tasks))
        }
        ("GET", "/api/version") => Response::json(
            200,
            &serde_json::json!({ "server": SERVER_NAME, "version": env!("CARGO_PKG_VERSION"), "protocol": PROTOCOL_VERSION }),
        ),
        ("GET", p) => static_file(p, shared),
        (_, "/upload/annotations" | "/upload/judgments") => Response::error(405, "use POST"),
        _ => Response::error(404, "not found"),
    }
}

fn static_file(path: &str, shared: &Shared) -> Response {
    let Some(root) = shared.config.static_dir.as_ref() else {
        return Response::error(404, "no static assets configured");
    };
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Response::error(404, "not found");
    }
    let mut full = root.join(rel);
    if full.is_dir() {
        full = full.join("index.html");
    }
    match std::fs::read(&full) {
        Ok(body) => Response {
            status: 200,
            content_type: content_type(&full),
            body,
        },
        Err(_) => Response::error(404, "not found"),
    }
}

fn content_type(p: &Path) -> &'static str {
    match p.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

fn append_lines(path: &Path, lines: &[String]) -> io::Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

fn upload_annotations(body: &[u8], shared: &Shared) -> Response {
    let Ok(text) = std::str::from_utf8(body) else {
        return Response::error(400, "body is not utf-8");
    };
    let records = match parse_annotations(text) {
        Ok(r) => r,
        Err(e) => return Response::error(400, e.to_string()),
    };
    let lines: Vec<String> = records.iter().map(|r| serde_json::to_string(r).expect("record serializes")).collect();
    let _guard = shared.log.lock().expect("log lock");
    match append_lines(&shared.config.upload_dir.join("annotations.jsonl"), &lines) {
        Ok(()) => Response::json(200, &serde_json::json!({ "accepted": records.len() })),
        Err(e) => Response::error(500, e.to_string()),
    }
}

fn upload_judgments(body: &[u8], shared: &Shared) -> Response {
    let Ok(text) = std::str::from_utf8(body) else {
        return Response::error(400, "body is not utf-8");
    };
    let records = match parse_judgments(text) {
        Ok(r) => r,
        Err(e) => return Response::error(400, e.to_string()),
    };
    let path = shared.config.upload_dir.join("judgments.jsonl");
    let _guard = shared.log.lock().expect("log lock");
    let mut all = std::fs::read_to_string(&path).ok().and_then(|s| parse_judgments(&s).ok()).unwrap_or_default();
    all.extend(records.iter().cloned());
    if let Err(e) = aggregate_all(&all) {
        return Response::error(400, e.to_string());
    }
    let lines: Vec<String> = records.iter().map(|r| serde_json::to_string(r).expect("record serializes")).collect();
    match append_lines(&path, &lines) {
        Ok(()) => Response::json(200, &serde_json::json!({ "accepted": records.len() })),
        Err(e) => Response::error(500, e.to_string()),
    }
}

// ---------------------------------------------------------------- sessions

/// A message transport for one session.
trait Wire {
    fn send(&mut self, msg: &Message) -> io::Result<()>;
    /// The next received message if one is available; an error once the peer is gone.
    fn poll(&mut self) -> io::Result<Option<Message>>;
    fn close(&mut self);
}

struct TcpWire {
    stream: TcpStream,
    rx: Receiver<io::Result<Message>>,
}

impl TcpWire {
    fn new(stream: TcpStream) -> io::Result<Self> {
        let mut reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || loop {
            match read_message(&mut reader) {
                Ok(Some(m)) => {
                    if tx.send(Ok(m)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        });
        Ok(TcpWire { stream, rx })
    }
}

impl Wire for TcpWire {
    fn send(&mut self, msg: &Message) -> io::Result<()> {
        write_message(&mut self.stream, msg)
    }

    fn poll(&mut self) -> io::Result<Option<Message>> {
        match self.rx.try_recv() {
            Ok(r) => r.map(Some),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(io::Error::new(io::ErrorKind::ConnectionAborted, "peer closed")),
        }
    }

    fn close(&mut self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

struct WsWire {
    ws: WebSocket<Prefixed>,
}

impl Wire for WsWire {
    fn send(&mut self, msg: &Message) -> io::Result<()> {
        self.ws
            .send(tungstenite::Message::Binary(msg.encode()))
            .map_err(|e| io::Error::other(e.to_string()))
    }

    fn poll(&mut self) -> io::Result<Option<Message>> {
        loop {
            match self.ws.read() {
                Ok(tungstenite::Message::Binary(b)) => {
                    return Message::decode(&b)
                        .map(Some)
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
                }
                Ok(tungstenite::Message::Close(_)) => {
                    return Err(io::Error::new(io::ErrorKind::ConnectionAborted, "peer closed"))
                }
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(io::Error::other(e.to_string())),
            }
        }
    }

    fn close(&mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}

/// Waits for a message, giving up on shutdown or after `timeout`.
fn wait_message(wire: &mut dyn Wire, shared: &Shared, timeout: Duration) -> io::Result<Option<Message>> {
    let until = Instant::now() + timeout;
    while Instant::now() < until && !shared.shutdown.load(Ordering::SeqCst) {
        if let Some(m) = wire.poll()? {
            return Ok(Some(m));
        }
        std::thread::sleep(POLL);
    }
    Ok(None)
}

/// Handshake, then episodes on demand until the client leaves or the server stops.
fn serve_session(wire: &mut dyn Wire, shared: &Shared) -> io::Result<()> {
    let session = shared.sessions.fetch_add(1, Ordering::SeqCst);
    let role = match wait_message(wire, shared, Duration::from_secs(10))? {
        Some(Message::Hello { protocol, role, name }) => {
            wire.send(&Message::Hello {
                protocol: PROTOCOL_VERSION,
                role,
                name: SERVER_NAME.into(),
            })?;
            if protocol != PROTOCOL_VERSION {
                log::warn!("session {session}: client {name} speaks protocol {protocol}, server {PROTOCOL_VERSION}");
                wire.close();
                return Ok(());
            }
            log::info!("session {session}: {name} as {}", role.as_str());
            role
        }
        _ => {
            wire.close();
            return Ok(());
        }
    };
    let mut config = shared.config.session;
    let mut episode = 0u64;
    let mut pending: Option<Message> = None;
    loop {
        let msg = match pending.take() {
            Some(m) => Some(m),
            None => match wait_message(wire, shared, Duration::from_secs(3600)) {
                Ok(m) => m,
                Err(_) => break,
            },
        };
        let Some(msg) = msg else { break };
        match msg {
            Message::SessionConfig(c) => {
                if c.validate().is_ok() {
                    config = c;
                }
            }
            Message::Reset { .. } | Message::LoadState { .. } => {
                let start = match start_episode(&msg, &shared.config) {
                    Ok(s) => s,
                    Err(reason) => {
                        log::warn!("session {session}: {reason}");
                        wire.send(&Message::EndEpisode {
                            tick: 0,
                            reason: EndReason::Failure,
                        })?;
                        continue;
                    }
                };
                let (outcome, connected, next) = run_episode_wire(wire, shared, start, config, role);
                log_episode(shared, session, episode, &outcome, role);
                episode += 1;
                if !connected {
                    break;
                }
                pending = next;
            }
            Message::EndEpisode { .. } => break,
            other => log::debug!("session {session}: ignoring {} between episodes", other.name()),
        }
    }
    wire.close();
    Ok(())
}

struct EpisodeStart {
    state: WorldState,
    seed: u64,
    task: Option<TaskSpec>,
    budget: u64,
}

fn start_episode(msg: &Message, config: &ServerConfig) -> Result<EpisodeStart, String> {
    match msg {
        Message::Reset {
            seed,
            task_id: Some(id), ..
        } => {
            let task = config
                .tasks
                .iter()
                .find(|t| &t.task_id == id)
                .ok_or_else(|| format!("unknown task {id}"))?;
            Ok(EpisodeStart {
                state: instantiate_task(task, *seed).map_err(|e| e.to_string())?,
                seed: *seed,
                budget: u64::from(task.budget_ticks),
                task: Some(task.clone()),
            })
        }
        Message::Reset { seed, world, .. } => {
            let name = world.as_deref().unwrap_or("playroom");
            let layout = layouts()
                .iter()
                .find(|l| l.reference == name || WorldId::parse(name) == Some(l.world))
                .ok_or_else(|| format!("unknown world or layout {name}"))?;
            Ok(EpisodeStart {
                state: layout.instantiate(*seed),
                seed: *seed,
                task: None,
                budget: config.free_budget,
            })
        }
        Message::LoadState { bytes } => Ok(EpisodeStart {
            state: WorldState::load(bytes).map_err(|e| e.to_string())?,
            seed: 0,
            task: None,
            budget: config.free_budget.max(u64::from(DEFAULT_BUDGET_TICKS)),
        }),
        _ => Err("not an episode start".into()),
    }
}

/// Runs one episode against the wall clock. Returns the outcome, whether the client is
/// still connected, and a message that should start the next episode.
fn run_episode_wire(
    wire: &mut dyn Wire,
    shared: &Shared,
    start: EpisodeStart,
    config: SessionConfig,
    role: Role,
) -> (SessionOutcome, bool, Option<Message>) {
    let mut core = SessionCore::new(
        start.state,
        config,
        start.seed,
        start.task.as_ref().map(|t| t.task_id.clone()),
        role,
        start.budget,
    );
    if let Some(task) = &start.task {
        if let Ok(ev) = EpisodeEvaluator::new(task, &core.state) {
            core = core.with_evaluator(ev);
        }
        core.set_instruction(&task.instruction, SegmentSource::Live);
    }
    let source = match role {
        Role::Setter | Role::Instructor => SegmentSource::Setter,
        _ => SegmentSource::Live,
    };
    let lat = config.latency;
    let mut rng = ChaCha8Rng::seed_from_u64(start.seed);
    let mut jitter = move || Duration::from_millis(if lat.jitter_ms == 0 { 0 } else { rng.gen_range(0..=u64::from(lat.jitter_ms)) });
    let obs_delay = Duration::from_millis(u64::from(lat.obs_delay_ms));
    let act_delay = Duration::from_millis(u64::from(lat.action_delay_ms));
    let tick = Duration::from_secs_f64(1.0 / f64::from(config.tick_hz));

    let t0 = Instant::now();
    let mut outbox: VecDeque<(Instant, Message)> = VecDeque::new();
    let mut inbox: Vec<(Instant, ActionChunk)> = Vec::new();
    let mut connected = true;
    let mut next = None;
    let mut overruns = 0u64;
    outbox.push_back((t0, Message::SessionConfig(config)));
    if let Some(task) = &start.task {
        outbox.push_back((t0, Message::Instruction { tick: 0, text: task.instruction.clone() }));
    }
    outbox.push_back((t0 + obs_delay + jitter(), Message::Observation(core.state.observe())));

    let mut i = 0u64;
    while !core.done() {
        let deadline = t0 + tick * (i as u32 + 1);
        loop {
            let now = Instant::now();
            while connected && outbox.front().is_some_and(|(due, _)| *due <= now) {
                let (_, m) = outbox.pop_front().expect("non-empty");
                if wire.send(&m).is_err() {
                    connected = false;
                }
            }
            while connected {
                match wire.poll() {
                    Ok(Some(Message::Action(c))) => inbox.push((Instant::now() + act_delay + jitter(), c)),
                    Ok(Some(Message::Instruction { text, .. } | Message::Interrupt { text, .. })) => core.set_instruction(&text, source),
                    Ok(Some(Message::EndEpisode { .. })) => core.end(EndReason::Requested),
                    Ok(Some(m @ (Message::Reset { .. } | Message::LoadState { .. }))) => {
                        core.end(EndReason::Requested);
                        next = Some(m);
                    }
                    Ok(Some(m)) => log::debug!("ignoring {} during an episode", m.name()),
                    Ok(None) => break,
                    Err(_) => connected = false,
                }
            }
            if !connected {
                core.end(EndReason::Disconnect);
            }
            if shared.shutdown.load(Ordering::SeqCst) {
                core.end(EndReason::Disconnect);
            }
            if core.done() || now >= deadline {
                break;
            }
            std::thread::sleep(POLL.min(deadline - now));
        }
        if core.done() {
            break;
        }
        let now = Instant::now();
        inbox.sort_by_key(|(due, _)| *due);
        let ready = inbox.iter().take_while(|(due, _)| *due <= now).count();
        for (_, c) in inbox.drain(..ready) {
            core.buffer.insert(&c, core.state.tick);
        }
        let obs = match core.step() {
            Ok(o) => o,
            Err(e) => {
                log::error!("step failed: {e}");
                core.end(EndReason::Failure);
                break;
            }
        };
        i += 1;
        if Instant::now() > t0 + tick * (i as u32 + 1) {
            overruns += 1;
        }
        outbox.push_back((Instant::now() + obs_delay + jitter(), Message::Observation(obs)));
    }
    let tick_now = core.state.tick;
    let outcome = core.finish(overruns);
    if connected {
        for (_, m) in outbox.drain(..) {
            let _ = wire.send(&m);
        }
        let _ = wire.send(&Message::EndEpisode {
            tick: tick_now,
            reason: outcome.end_reason,
        });
    }
    (outcome, connected && !shared.shutdown.load(Ordering::SeqCst), next)
}

fn log_episode(shared: &Shared, session: u64, episode: u64, outcome: &SessionOutcome, role: Role) {
    let _guard = shared.log.lock().expect("log lock");
    let dir = &shared.config.trajectory_dir;
    let file = outcome.trajectory.as_ref().and_then(|t| {
        let name = format!("s{session:04}-e{episode:03}.mwtr");
        match t.save(&dir.join(&name)) {
            Ok(()) => Some(name),
            Err(e) => {
                log::error!("saving trajectory {name}: {e}");
                None
            }
        }
    });
    let entry = EpisodeLog {
        session,
        episode,
        file,
        task_id: outcome.trajectory.as_ref().and_then(|t| t.header.task_id.clone()),
        seed: outcome.trajectory.as_ref().map_or(0, |t| t.header.seed),
        role: role.as_str(),
        status: outcome.status.as_str(),
        end_reason: outcome.end_reason.as_str(),
        ticks: outcome.executed.len() as u64,
        on_time: outcome.stats.on_time_fraction(),
        overruns: outcome.overruns,
    };
    if let Err(e) = append_lines(&dir.join("sessions.jsonl"), &[serde_json::to_string(&entry).expect("log serializes")]) {
        log::error!("writing session log: {e}");
    }
}
