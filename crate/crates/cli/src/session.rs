//! Single-client session service.
//!
//! A worker thread owns the [`Pipeline`] and decomposes the frames in order.
//! Requests are answered from the latest completed results, so edits never
//! wait on a running solve. Clicks go to the worker, which applies them
//! between frames and restarts the decomposition from the first frame.

use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;

use lumisplit_core::editing::{recolor, suppress_spill};
use lumisplit_core::imaging::{png_bytes, Frame, Rgb};
use lumisplit_core::palette::BaseColorPalette;
use lumisplit_core::pipeline::{Click, FrameResult, Pipeline, PipelineConfig};
use lumisplit_core::{Error, Result};
use tungstenite::{Message, WebSocket};

use crate::journal::{Journal, JournalEntry};
use crate::protocol::{encode_image, ClientMessage, Request, Response, ServerMessage, PREVIEW_PANEL};

/// A message to the client.
#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Text(String),
    Binary(Vec<u8>),
}

struct ClickReply {
    region_pixels: usize,
    source_id: usize,
    corrected_id: usize,
    scores: Vec<Option<f64>>,
    preview: Frame,
}

enum Command {
    Click(Click, Sender<std::result::Result<ClickReply, Error>>),
    Shutdown,
}

struct State {
    palette: BaseColorPalette,
    results: Vec<Option<Arc<FrameResult>>>,
    failure: Option<String>,
}

struct Shared {
    state: Mutex<State>,
    ready: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn worker(mut pipeline: Pipeline, frames: Arc<Vec<Frame>>, shared: Arc<Shared>, commands: Receiver<Command>) {
    let mut next = 0;
    loop {
        let command = if next < frames.len() {
            match commands.try_recv() {
                Ok(c) => Some(c),
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => return,
            }
        } else {
            match commands.recv() {
                Ok(c) => Some(c),
                Err(_) => return,
            }
        };
        match command {
            Some(Command::Shutdown) => return,
            Some(Command::Click(click, reply)) => {
                let outcome = pipeline.click(click).map(|(region, outcome)| ClickReply {
                    region_pixels: region.len(),
                    source_id: region.source_id,
                    corrected_id: outcome.corrected_id,
                    scores: outcome.scores,
                    preview: pipeline.first_clusters().as_frame(&pipeline.initial_palette),
                });
                if outcome.is_ok() {
                    let mut st = shared.lock();
                    st.results.iter_mut().for_each(|r| *r = None);
                    st.palette = pipeline.palette.clone();
                    st.failure = None;
                    next = 0;
                }
                let _ = reply.send(outcome);
            }
            None => {
                let step = if next == 0 {
                    pipeline.solve_first()
                } else {
                    pipeline.next_frame(&frames[next])
                };
                let mut st = shared.lock();
                match step {
                    Ok(r) => {
                        log::debug!("frame {next} done, energy {:.6e}", r.report.final_energy);
                        st.results[next] = Some(Arc::new(r.clone()));
                        st.palette = pipeline.palette.clone();
                        next += 1;
                    }
                    Err(e) => {
                        log::error!("frame {next} failed: {e}");
                        st.failure = Some(format!("frame {next}: {e}"));
                        next = frames.len();
                    }
                }
                shared.ready.notify_all();
            }
        }
    }
}

/// Request failure reported to the client as an `error` response.
struct Reject {
    code: &'static str,
    message: String,
}

impl Reject {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Reject {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Reject {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptyRegion { .. } => "empty-region",
            Error::InvalidCluster(_) => "invalid-cluster",
            Error::NumericalFault { .. } | Error::CorrectionFailed => "solver",
            _ => "internal",
        };
        Reject::new(code, e.to_string())
    }
}

/// Answer to one request: the response plus its image payloads.
struct Reply {
    response: Response,
    images: Vec<(u8, Vec<u8>)>,
}

pub struct Session {
    frames: Arc<Vec<Frame>>,
    shared: Arc<Shared>,
    commands: Sender<Command>,
    worker: Option<JoinHandle<()>>,
    journal: Option<Journal>,
    next_seq: u64,
    last_client_seq: Option<u64>,
}

impl Session {
    /// Clusters the first frame and starts decomposing in the background.
    pub fn start(frames: Vec<Frame>, config: PipelineConfig, journal: Option<Journal>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Config("no input frames".into()))?;
        let pipeline = Pipeline::new(first, config)?;
        Self::with_pipeline(pipeline, frames, journal)
    }

    /// Serves `frames` with a prepared pipeline, e.g. one built with
    /// [`Pipeline::with_clusters`]. `frames[0]` must be its first frame.
    pub fn with_pipeline(pipeline: Pipeline, frames: Vec<Frame>, journal: Option<Journal>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Config("no input frames".into()));
        }
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                palette: pipeline.palette.clone(),
                results: vec![None; frames.len()],
                failure: None,
            }),
            ready: Condvar::new(),
        });
        let frames = Arc::new(frames);
        let (tx, rx) = mpsc::channel();
        let worker = {
            let (frames, shared) = (frames.clone(), shared.clone());
            std::thread::Builder::new()
                .name("decompose".into())
                .spawn(move || worker(pipeline, frames, shared, rx))
                .map_err(|e| Error::Config(format!("cannot start worker: {e}")))?
        };
        Ok(Session {
            frames,
            shared,
            commands: tx,
            worker: Some(worker),
            journal,
            next_seq: 0,
            last_client_seq: None,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn palette(&self) -> BaseColorPalette {
        self.shared.lock().palette.clone()
    }

    /// Blocks until frame `index` is decomposed.
    pub fn wait_frame(&self, index: usize) -> std::result::Result<Arc<FrameResult>, String> {
        let mut st = self.shared.lock();
        loop {
            if let Some(r) = &st.results[index] {
                return Ok(r.clone());
            }
            if let Some(f) = &st.failure {
                return Err(f.clone());
            }
            st = self.shared.ready.wait(st).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Blocks until every frame is decomposed.
    pub fn wait_all(&self) -> std::result::Result<Vec<Arc<FrameResult>>, String> {
        (0..self.frames.len()).map(|t| self.wait_frame(t)).collect()
    }

    /// Latest completed frame at or below `bound`, waiting for the first frame
    /// if nothing is done yet.
    fn latest(&self, bound: Option<usize>) -> std::result::Result<Arc<FrameResult>, String> {
        {
            let st = self.shared.lock();
            let top = bound.unwrap_or(self.frames.len() - 1);
            if bound.is_some() {
                if let Some(r) = &st.results[top] {
                    return Ok(r.clone());
                }
            } else if let Some(r) = st.results[..=top].iter().rev().flatten().next() {
                return Ok(r.clone());
            }
        }
        self.wait_frame(bound.unwrap_or(0))
    }

    fn seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    fn message(&mut self, reply_to: Option<u64>, response: Response) -> (u64, Outgoing) {
        let seq = self.seq();
        let msg = ServerMessage {
            seq,
            reply_to,
            response,
        };
        (seq, Outgoing::Text(serde_json::to_string(&msg).expect("serializable")))
    }

    fn error(&mut self, reply_to: Option<u64>, code: &str, message: String) -> Vec<Outgoing> {
        log::warn!("request rejected ({code}): {message}");
        vec![self.message(
            reply_to,
            Response::Error {
                code: code.into(),
                message,
            },
        )
        .1]
    }

    /// Handles one text frame. Malformed or failing requests produce an
    /// `error` response and leave the session usable.
    pub fn handle_text(&mut self, text: &str) -> Vec<Outgoing> {
        let msg: ClientMessage = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return self.error(None, "malformed", e.to_string()),
        };
        if self.last_client_seq.is_some_and(|last| msg.seq <= last) {
            return self.error(
                Some(msg.seq),
                "sequence",
                format!("sequence id {} does not increase", msg.seq),
            );
        }
        self.last_client_seq = Some(msg.seq);
        let result = self.dispatch(&msg.request);
        if let Some(j) = &mut self.journal {
            let entry = JournalEntry {
                seq: msg.seq,
                request: msg.request.clone(),
                ok: result.is_ok(),
            };
            if let Err(e) = j.append(&entry) {
                log::error!("journal write failed: {e}");
            }
        }
        match result {
            Ok(reply) => {
                let (seq, head) = self.message(Some(msg.seq), reply.response);
                let mut out = vec![head];
                out.extend(
                    reply
                        .images
                        .into_iter()
                        .map(|(panel, png)| Outgoing::Binary(encode_image(seq, panel, &png))),
                );
                out
            }
            Err(r) => self.error(Some(msg.seq), r.code, r.message),
        }
    }

    fn check_frame(&self, frame: usize) -> std::result::Result<(), Reject> {
        if frame >= self.frames.len() {
            return Err(Reject::new(
                "bad-request",
                format!("frame {frame} out of range (0..{})", self.frames.len()),
            ));
        }
        Ok(())
    }

    fn dispatch(&mut self, request: &Request) -> std::result::Result<Reply, Reject> {
        let solver = |m: String| Reject::new("solver", m);
        match *request {
            Request::Hello => {
                let st = self.shared.lock();
                let (width, height) = self.frames[0].dims();
                Ok(Reply {
                    response: Response::Status {
                        frames: self.frames.len(),
                        width,
                        height,
                        k: st.palette.k(),
                        palette: st.palette.colors.clone(),
                        completed: st.results.iter().flatten().count(),
                    },
                    images: Vec::new(),
                })
            }
            Request::FrameRequest { frame } => {
                self.check_frame(frame)?;
                let result = self.wait_frame(frame).map_err(solver)?;
                let mut panels = vec!["input".to_string(), "reflectance".into()];
                let layers = &result.layers;
                let (w, h) = (layers.width, layers.height);
                let mut images = vec![
                    png(w, h, self.frames[frame].pixels())?,
                    png(w, h, &layers.reflectance_image())?,
                ];
                for l in 0..=layers.k {
                    panels.push(format!("t{l}"));
                    let gray: Vec<Rgb> = layers.layer(l).into_iter().map(|v| [v; 3]).collect();
                    images.push(png(w, h, &gray)?);
                }
                Ok(Reply {
                    response: Response::Layers { frame, panels },
                    images: images.into_iter().enumerate().map(|(i, p)| (i as u8, p)).collect(),
                })
            }
            Request::Click { frame, x, y, extend } => {
                if frame != 0 {
                    return Err(Reject::new("bad-request", "corrections apply to frame 0 only"));
                }
                let (w, h) = self.frames[0].dims();
                if x >= w || y >= h {
                    return Err(Reject::new("bad-request", format!("click ({x}, {y}) outside {w}x{h}")));
                }
                let (tx, rx) = mpsc::channel();
                self.commands
                    .send(Command::Click(Click { x, y, extend }, tx))
                    .map_err(|_| solver("decomposition worker stopped".into()))?;
                let reply = rx.recv().map_err(|_| solver("decomposition worker stopped".into()))??;
                Ok(Reply {
                    response: Response::CorrectResult {
                        frame,
                        region_pixels: reply.region_pixels,
                        source_id: reply.source_id,
                        corrected_id: reply.corrected_id,
                        scores: reply.scores,
                    },
                    images: vec![(PREVIEW_PANEL, png(w, h, reply.preview.pixels())?)],
                })
            }
            Request::Recolor { frame, k, color } => {
                if let Some(f) = frame {
                    self.check_frame(f)?;
                }
                if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Reject::new("bad-request", "color channels must lie in [0, 1]"));
                }
                let result = self.latest(frame).map_err(solver)?;
                let mut palette = self.palette();
                let edited = recolor(&result.layers, &palette, k, color, &result.clusters)?;
                palette.colors[k - 1] = color;
                let (w, h) = edited.dims();
                Ok(Reply {
                    response: Response::Palette {
                        frame: result.index,
                        palette: palette.colors,
                    },
                    images: vec![(PREVIEW_PANEL, png(w, h, edited.pixels())?)],
                })
            }
            Request::Suppress { frame, k } => {
                if let Some(f) = frame {
                    self.check_frame(f)?;
                }
                let result = self.latest(frame).map_err(solver)?;
                let edited = suppress_spill(&result.layers, &self.palette(), k)?;
                let (w, h) = edited.dims();
                Ok(Reply {
                    response: Response::Layers {
                        frame: result.index,
                        panels: vec!["preview".into()],
                    },
                    images: vec![(PREVIEW_PANEL, png(w, h, edited.pixels())?)],
                })
            }
        }
    }
}

fn png(width: usize, height: usize, data: &[Rgb]) -> std::result::Result<Vec<u8>, Reject> {
    png_bytes(width, height, data, 1.0).map_err(|e| Reject::new("internal", e.to_string()))
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.commands.send(Command::Shutdown);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[derive(Debug)]
pub enum ServeError {
    Io(std::io::Error),
    Protocol(String),
}

impl std::fmt::Display for ServeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServeError::Io(e) => write!(f, "i/o error: {e}"),
            ServeError::Protocol(m) => write!(f, "protocol error: {m}"),
        }
    }
}

impl std::error::Error for ServeError {}

fn send(ws: &mut WebSocket<TcpStream>, out: Vec<Outgoing>) -> tungstenite::Result<()> {
    for o in out {
        ws.send(match o {
            Outgoing::Text(t) => Message::text(t),
            Outgoing::Binary(b) => Message::binary(b),
        })?;
    }
    Ok(())
}

/// Serves one WebSocket client until it disconnects.
pub fn serve_client(stream: TcpStream, session: &mut Session) -> std::result::Result<(), ServeError> {
    let peer = stream.peer_addr().ok();
    let mut ws = tungstenite::accept(stream).map_err(|e| ServeError::Protocol(e.to_string()))?;
    log::info!("client connected from {peer:?}");
    loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(tungstenite::Error::Io(e)) if e.kind() == std::io::ErrorKind::ConnectionReset => break,
            Err(e) => return Err(ServeError::Protocol(e.to_string())),
        };
        let out = match msg {
            Message::Text(t) => session.handle_text(t.as_str()),
            Message::Binary(_) => session.error(None, "malformed", "binary frames flow server to client only".into()),
            Message::Close(_) => break,
            _ => continue,
        };
        send(&mut ws, out).map_err(|e| ServeError::Protocol(e.to_string()))?;
    }
    log::info!("client {peer:?} disconnected");
    Ok(())
}

/// Accepts clients one at a time. Stops after `max_clients` when given.
pub fn serve(listener: TcpListener, session: &mut Session, max_clients: Option<usize>) -> std::result::Result<(), ServeError> {
    for (served, stream) in (1..).zip(listener.incoming()) {
        let stream = stream.map_err(ServeError::Io)?;
        if let Err(e) = serve_client(stream, session) {
            log::warn!("session client dropped: {e}");
            if max_clients.is_some() {
                return Err(e);
            }
        }
        if max_clients.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}
