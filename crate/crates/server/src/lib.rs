//! Live show server.
//!
//! Devices connect over TCP with the 4-byte length-prefixed framing. The
//! operator API is HTTP: `GET /state`, `GET /devices`, `POST /cmd`,
//! `GET /log`, and `GET /stream`, a WebSocket carrying the run log as
//! binary frames in the same framing.
//!
//! A single core task owns the [`Show`]; connection handlers only move
//! bytes and never touch engine state.

pub mod config;
mod http;
pub mod show;

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use stagelink_core::engine::{EngineError, EngineSummary, OperatorCmd};
use stagelink_core::gateway::ConnId;
use stagelink_core::ids::Millis;
use stagelink_core::protocol::{self, MAX_FRAME};
use stagelink_core::runlog::LogLine;
use stagelink_core::script::CueGraph;
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;

pub use config::{Config, ConfigError};
pub use http::router;
pub use show::{CmdOutcome, DeviceView, Show};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("run log {path}: {source}")]
    Log { path: String, source: std::io::Error },
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("http server: {0}")]
    Http(std::io::Error),
    #[error("the show task stopped")]
    Gone,
}

enum Request {
    Connected { conn: ConnId, tx: mpsc::UnboundedSender<Vec<u8>> },
    Payload { conn: ConnId, bytes: Vec<u8> },
    Refused { conn: ConnId, code: &'static str, detail: String },
    Closed { conn: ConnId },
    Operator { cmd: OperatorCmd, reply: oneshot::Sender<CmdOutcome> },
    State { reply: oneshot::Sender<EngineSummary> },
    Devices { reply: oneshot::Sender<Vec<DeviceView>> },
    Log { tail: usize, reply: oneshot::Sender<Vec<String>> },
}

/// Cheap, cloneable access to the core task.
#[derive(Clone)]
pub struct Handle {
    tx: mpsc::UnboundedSender<Request>,
    next_conn: Arc<AtomicU64>,
    stream: broadcast::Sender<Bytes>,
}

impl Handle {
    fn conn_id(&self) -> ConnId {
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }

    fn send(&self, r: Request) {
        // the core task outlives every transport; a send after shutdown is moot
        let _ = self.tx.send(r);
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Request) -> Result<T, ServerError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| ServerError::Gone)?;
        rx.await.map_err(|_| ServerError::Gone)
    }

    pub async fn state(&self) -> Result<EngineSummary, ServerError> {
        self.ask(|reply| Request::State { reply }).await
    }

    pub async fn devices(&self) -> Result<Vec<DeviceView>, ServerError> {
        self.ask(|reply| Request::Devices { reply }).await
    }

    pub async fn command(&self, cmd: OperatorCmd) -> Result<CmdOutcome, ServerError> {
        self.ask(|reply| Request::Operator { cmd, reply }).await
    }

    /// The last `tail` run-log lines, JSON encoded.
    pub async fn log(&self, tail: usize) -> Result<Vec<String>, ServerError> {
        self.ask(|reply| Request::Log { tail, reply }).await
    }

    /// Framed run-log lines as they are written.
    pub fn subscribe(&self) -> broadcast::Receiver<Bytes> {
        self.stream.subscribe()
    }
}

/// Stream frame payload: `{"type":"log","seq":N,"ts":T,"line":{...}}`.
/// `seq` counts stream messages from 1, so a gap means missed lines.
pub fn stream_frame(seq: u64, ts: Millis, line: &LogLine) -> Vec<u8> {
    let v = serde_json::json!({ "type": "log", "seq": seq, "ts": ts, "line": line });
    protocol::frame(v.to_string().as_bytes()).expect("log lines fit in a frame")
}

struct Core {
    show: Show,
    started: Instant,
    writers: BTreeMap<ConnId, mpsc::UnboundedSender<Vec<u8>>>,
    recent: VecDeque<String>,
    capacity: usize,
    sink: Option<BufWriter<File>>,
    sink_path: String,
    stream: broadcast::Sender<Bytes>,
    stream_seq: u64,
}

impl Core {
    fn now(&self) -> Millis {
        self.started.elapsed().as_millis() as Millis
    }

    fn handle(&mut self, r: Request) {
        let now = self.now();
        match r {
            Request::Connected { conn, tx } => {
                self.writers.insert(conn, tx);
            }
            Request::Payload { conn, bytes } => self.show.payload(conn, &bytes, now),
            Request::Refused { conn, code, detail } => {
                self.writers.remove(&conn);
                self.show.refused(conn, code, detail, now);
            }
            Request::Closed { conn } => {
                self.writers.remove(&conn);
                self.show.closed(conn, now);
            }
            Request::Operator { cmd, reply } => {
                let _ = reply.send(self.show.operator(cmd, now));
            }
            Request::State { reply } => {
                let _ = reply.send(self.show.summary());
            }
            Request::Devices { reply } => {
                let _ = reply.send(self.show.devices());
            }
            Request::Log { tail, reply } => {
                let skip = self.recent.len().saturating_sub(tail);
                let _ = reply.send(self.recent.iter().skip(skip).cloned().collect());
            }
        }
    }

    fn flush(&mut self) -> Result<(), ServerError> {
        let now = self.now();
        let (outbound, lines) = self.show.drain();
        for o in outbound {
            let Some(tx) = self.writers.get(&o.conn) else { continue };
            match protocol::encode(&o.msg) {
                Ok(bytes) => {
                    let _ = tx.send(bytes);
                }
                Err(e) => tracing::warn!(conn = o.conn, "dropping outbound message: {e}"),
            }
        }
        for line in &lines {
            let json = line.to_json();
            if let Some(sink) = &mut self.sink {
                writeln!(sink, "{json}").map_err(|source| ServerError::Log { path: self.sink_path.clone(), source })?;
            }
            if self.recent.len() == self.capacity {
                self.recent.pop_front();
            }
            self.recent.push_back(json);
            self.stream_seq += 1;
            let _ = self.stream.send(Bytes::from(stream_frame(self.stream_seq, now, line)));
        }
        if let (Some(sink), false) = (&mut self.sink, lines.is_empty()) {
            sink.flush().map_err(|source| ServerError::Log { path: self.sink_path.clone(), source })?;
        }
        Ok(())
    }
}

/// Start the core task. It runs until `shutdown` flips to true or every
/// handle is dropped.
pub fn spawn_core(
    graph: Arc<CueGraph>,
    cfg: &Config,
    shutdown: watch::Receiver<bool>,
) -> Result<(Handle, JoinHandle<Result<(), ServerError>>), ServerError> {
    let sink = match &cfg.log {
        Some(p) => Some(BufWriter::new(
            File::create(p).map_err(|source| ServerError::Log { path: p.display().to_string(), source })?,
        )),
        None => None,
    };
    let (tx, rx) = mpsc::unbounded_channel();
    let (stream, _) = broadcast::channel(4096);
    let handle = Handle { tx, next_conn: Arc::new(AtomicU64::new(1)), stream: stream.clone() };
    let core = Core {
        show: Show::new(graph, cfg, 0)?,
        started: Instant::now(),
        writers: BTreeMap::new(),
        recent: VecDeque::new(),
        capacity: cfg.log_capacity.max(1),
        sink,
        sink_path: cfg.log.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        stream,
        stream_seq: 0,
    };
    let task = tokio::spawn(run_core(core, rx, Duration::from_millis(cfg.tick_ms), shutdown));
    Ok((handle, task))
}

async fn run_core(
    mut core: Core,
    mut rx: mpsc::UnboundedReceiver<Request>,
    tick: Duration,
    mut shutdown: watch::Receiver<bool>,
) -> Result<(), ServerError> {
    let mut ticker = tokio::time::interval(tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    core.flush()?;
    loop {
        tokio::select! {
            r = rx.recv() => match r {
                Some(r) => core.handle(r),
                None => break,
            },
            _ = ticker.tick() => {
                let now = core.now();
                core.show.tick(now);
            }
            _ = shutdown.changed() => break,
        }
        core.flush()?;
    }
    core.flush()
}

async fn serve_device(handle: Handle, stream: TcpStream) {
    let conn = handle.conn_id();
    let peer = stream.peer_addr().ok();
    tracing::info!(conn, ?peer, "device connected");
    let (mut rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Vec<u8>>();
    handle.send(Request::Connected { conn, tx });
    let writer = tokio::spawn(async move {
        while let Some(bytes) = rx.recv().await {
            if wr.write_all(&bytes).await.is_err() {
                break;
            }
        }
    });
    let mut header = [0u8; 4];
    loop {
        if rd.read_exact(&mut header).await.is_err() {
            handle.send(Request::Closed { conn });
            break;
        }
        let len = u32::from_be_bytes(header) as usize;
        if len > MAX_FRAME {
            let detail = format!("frame of {len} bytes exceeds {MAX_FRAME}");
            handle.send(Request::Refused { conn, code: "E_OVERSIZE", detail });
            break;
        }
        let mut bytes = vec![0u8; len];
        if rd.read_exact(&mut bytes).await.is_err() {
            handle.send(Request::Closed { conn });
            break;
        }
        handle.send(Request::Payload { conn, bytes });
    }
    writer.abort();
    tracing::info!(conn, "device disconnected");
}

/// A started server: device listener, HTTP listener and core task.
pub struct Running {
    pub devices: SocketAddr,
    pub http: SocketAddr,
    handle: Handle,
    shutdown: watch::Sender<bool>,
    core: JoinHandle<Result<(), ServerError>>,
    listeners: Vec<JoinHandle<()>>,
}

impl Running {
    pub fn handle(&self) -> &Handle {
        &self.handle
    }

    /// Stop accepting, stop the core task and flush the run log.
    pub async fn shutdown(self) -> Result<(), ServerError> {
        let _ = self.shutdown.send(true);
        for l in &self.listeners {
            l.abort();
        }
        self.core.await.map_err(|_| ServerError::Gone)?
    }
}

pub async fn start(graph: Arc<CueGraph>, cfg: Config) -> Result<Running, ServerError> {
    let devices = TcpListener::bind(cfg.listen).await.map_err(|source| ServerError::Bind { addr: cfg.listen, source })?;
    let http = TcpListener::bind(cfg.http).await.map_err(|source| ServerError::Bind { addr: cfg.http, source })?;
    let device_addr = devices.local_addr().map_err(ServerError::Http)?;
    let http_addr = http.local_addr().map_err(ServerError::Http)?;
    let (shutdown, shutdown_rx) = watch::channel(false);
    let (handle, core) = spawn_core(graph, &cfg, shutdown_rx)?;

    let h = handle.clone();
    let accept = tokio::spawn(async move {
        loop {
            match devices.accept().await {
                Ok((stream, _)) => {
                    let _ = stream.set_nodelay(true);
                    tokio::spawn(serve_device(h.clone(), stream));
                }
                Err(e) => tracing::warn!("accept failed: {e}"),
            }
        }
    });
    let app = router(handle.clone());
    let api = tokio::spawn(async move {
        if let Err(e) = axum::serve(http, app).await {
            tracing::error!("http server stopped: {e}");
        }
    });
    tracing::info!(%device_addr, %http_addr, "show server listening");
    Ok(Running { devices: device_addr, http: http_addr, handle, shutdown, core, listeners: vec![accept, api] })
}
