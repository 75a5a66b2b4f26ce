//! NDJSON wire protocol between the engine and external model runners.
//!
//! Every line is one object `{"v":1,"kind":...,"seq":n,"payload":{...}}`.
//! Tensors never travel inline; the engine hands out cache file paths.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TaskSpec;
use crate::domain::{ObjectiveKind, SplitLabel};

pub mod echo;
mod client;
mod runner;

pub use client::{check_predictions, OfferReply, RunnerClient};
pub use runner::{serve, RunnerModel};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_MESSAGE_BYTES: usize = 16 * 1024 * 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("no message within {}s while waiting for {expecting}", .waited.as_secs_f64())]
    Timeout { waited: Duration, expecting: String },
    #[error("message of {bytes} bytes exceeds the {MAX_MESSAGE_BYTES}-byte cap")]
    TooLarge { bytes: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("protocol version mismatch: engine speaks v{expected}, peer sent v{found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("expected {expected}, got {found}")]
    UnexpectedKind { expected: String, found: Kind },
    #[error("sequence number {found} does not follow {previous}")]
    Sequence { previous: u64, found: u64 },
    #[error("peer closed the connection")]
    Closed,
    #[error("runner error ({code}): {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("expected {expected} predictions, got {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("prediction {index} is invalid: {reason}")]
    BadPrediction { index: usize, reason: String },
    #[error("{what} does not exist: {}", .path.display())]
    MissingPath { what: String, path: PathBuf },
    #[error("cannot start runner: {0}")]
    Spawn(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    Capabilities,
    TaskOffer,
    DataManifest,
    TrainRequest,
    PredictRequest,
    Predictions,
    Progress,
    Error,
    Bye,
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = serde_json::to_value(self).expect("kind serializes");
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub engine: String,
    pub versions: Vec<u32>,
}

/// Where preprocessing happens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    /// The runner reads the engine-preprocessed cache.
    Engine,
    /// The runner owns its preprocessing (pretrained input statistics).
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub runner: String,
    pub objectives: Vec<ObjectiveKind>,
    #[serde(default)]
    pub max_embedding_dim: Option<usize>,
    pub preprocessing: Preprocessing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOffer {
    pub task: TaskSpec,
    pub seed: u64,
    pub n_outputs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub cache_path: PathBuf,
    /// A serialized `SplitManifest`.
    pub split_manifest_path: PathBuf,
    #[serde(with = "crate::domain::hex_u64")]
    pub split_hash: u64,
    pub counts: BTreeMap<SplitLabel, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub split: SplitLabel,
}

/// One row per example of the split, in manifest order; `null` marks a non-finite value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub split: SplitLabel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub example_ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Accepted,
    Ready,
    Training,
    Trained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Departures from the offered recipe, reported with `trained`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub deviations: BTreeMap<String, serde_json::Value>,
}

impl Progress {
    pub fn phase(phase: Phase) -> Progress {
        Progress { phase, epoch: None, metric: None, message: None, deviations: BTreeMap::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Declined,
    BadRequest,
    Internal,
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorCode::Declined => "declined",
            ErrorCode::BadRequest => "bad_request",
            ErrorCode::Internal => "internal",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bye {}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Hello(Hello),
    Capabilities(Capabilities),
    TaskOffer(Box<TaskOffer>),
    DataManifest(DataManifest),
    TrainRequest(TrainRequest),
    PredictRequest(PredictRequest),
    Predictions(Predictions),
    Progress(Progress),
    Error(ErrorBody),
    Bye(Bye),
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Hello(_) => Kind::Hello,
            Body::Capabilities(_) => Kind::Capabilities,
            Body::TaskOffer(_) => Kind::TaskOffer,
            Body::DataManifest(_) => Kind::DataManifest,
            Body::TrainRequest(_) => Kind::TrainRequest,
            Body::PredictRequest(_) => Kind::PredictRequest,
            Body::Predictions(_) => Kind::Predictions,
            Body::Progress(_) => Kind::Progress,
            Body::Error(_) => Kind::Error,
            Body::Bye(_) => Kind::Bye,
        }
    }

    fn payload(&self) -> serde_json::Value {
        let v = match self {
            Body::Hello(p) => serde_json::to_value(p),
            Body::Capabilities(p) => serde_json::to_value(p),
            Body::TaskOffer(p) => serde_json::to_value(p),
            Body::DataManifest(p) => serde_json::to_value(p),
            Body::TrainRequest(p) => serde_json::to_value(p),
            Body::PredictRequest(p) => serde_json::to_value(p),
            Body::Predictions(p) => serde_json::to_value(p),
            Body::Progress(p) => serde_json::to_value(p),
            Body::Error(p) => serde_json::to_value(p),
            Body::Bye(p) => serde_json::to_value(p),
        };
        v.expect("payloads serialize")
    }

    fn from_payload(kind: Kind, payload: serde_json::Value) -> Result<Body, serde_json::Error> {
        use serde_json::from_value as f;
        Ok(match kind {
            Kind::Hello => Body::Hello(f(payload)?),
            Kind::Capabilities => Body::Capabilities(f(payload)?),
            Kind::TaskOffer => Body::TaskOffer(Box::new(f(payload)?)),
            Kind::DataManifest => Body::DataManifest(f(payload)?),
            Kind::TrainRequest => Body::TrainRequest(f(payload)?),
            Kind::PredictRequest => Body::PredictRequest(f(payload)?),
            Kind::Predictions => Body::Predictions(f(payload)?),
            Kind::Progress => Body::Progress(f(payload)?),
            Kind::Error => Body::Error(f(payload)?),
            Kind::Bye => Body::Bye(f(payload)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub v: u32,
    pub seq: u64,
    pub body: Body,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    v: u32,
    kind: Kind,
    seq: u64,
    #[serde(default)]
    payload: serde_json::Value,
}

impl Message {
    /// One NDJSON line, without the trailing newline.
    pub fn encode(&self) -> Result<String, ProtocolError> {
        let wire = Wire { v: self.v, kind: self.body.kind(), seq: self.seq, payload: self.body.payload() };
        let line = serde_json::to_string(&wire).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if line.len() > MAX_MESSAGE_BYTES {
            return Err(ProtocolError::TooLarge { bytes: line.len() });
        }
        Ok(line)
    }

    pub fn decode(line: &[u8]) -> Result<Message, ProtocolError> {
        if line.len() > MAX_MESSAGE_BYTES {
            return Err(ProtocolError::TooLarge { bytes: line.len() });
        }
        let wire: Wire = serde_json::from_slice(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let payload = if wire.payload.is_null() { serde_json::json!({}) } else { wire.payload };
        let body = Body::from_payload(wire.kind, payload)
            .map_err(|e| ProtocolError::Malformed(format!("{} payload: {e}", wire.kind)))?;
        Ok(Message { v: wire.v, seq: wire.seq, body })
    }
}

type Incoming = Result<Vec<u8>, ProtocolError>;

fn read_line_capped(r: &mut impl BufRead, cap: usize) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut buf = Vec::new();
    let n = r.by_ref().take(cap as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
    } else if buf.len() > cap {
        return Err(ProtocolError::TooLarge { bytes: buf.len() });
    }
    Ok(Some(buf))
}

/// A duplex, strictly sequential message channel.
///
/// Reads happen on a helper thread so that waits can time out.
pub struct Connection {
    rx: Receiver<Incoming>,
    writer: Box<dyn Write + Send>,
    version: u32,
    next_seq: u64,
    last_seen: Option<u64>,
    timeout: Option<Duration>,
    /// Every line sent (`>`) and received (`<`), when recording.
    pub transcript: Option<Vec<String>>,
}

impl Connection {
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static, timeout: Option<Duration>) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                match read_line_capped(&mut reader, MAX_MESSAGE_BYTES) {
                    Ok(Some(line)) if line.iter().all(u8::is_ascii_whitespace) => continue,
                    Ok(Some(line)) => {
                        if tx.send(Ok(line)).is_err() {
                            return;
                        }
                    }
                    Ok(None) => {
                        let _ = tx.send(Err(ProtocolError::Closed));
                        return;
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            }
        });
        Connection {
            rx,
            writer: Box::new(writer),
            version: PROTOCOL_VERSION,
            next_seq: 1,
            last_seen: None,
            timeout,
            transcript: None,
        }
    }

    /// Speak a different protocol version (conformance testing only).
    pub fn set_version(&mut self, v: u32) {
        self.version = v;
    }

    pub fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }

    pub fn record(&mut self) {
        self.transcript = Some(Vec::new());
    }

    pub fn send(&mut self, body: Body) -> Result<u64, ProtocolError> {
        let seq = self.next_seq;
        let line = Message { v: self.version, seq, body }.encode()?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        self.next_seq += 1;
        if let Some(t) = &mut self.transcript {
            t.push(format!("> {line}"));
        }
        Ok(seq)
    }

    /// Next message; enforces the version and increasing sequence numbers.
    pub fn recv(&mut self, expecting: &str) -> Result<Message, ProtocolError> {
        let item = match self.timeout {
            Some(t) => match self.rx.recv_timeout(t) {
                Ok(item) => item,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(ProtocolError::Timeout { waited: t, expecting: expecting.to_string() })
                }
                Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::Closed),
            },
            None => self.rx.recv().unwrap_or(Err(ProtocolError::Closed)),
        };
        let line = item?;
        if let Some(t) = &mut self.transcript {
            t.push(format!("< {}", String::from_utf8_lossy(&line)));
        }
        let msg = Message::decode(&line)?;
        if msg.v != PROTOCOL_VERSION {
            return Err(ProtocolError::VersionMismatch { expected: PROTOCOL_VERSION, found: msg.v });
        }
        if let Some(prev) = self.last_seen {
            if msg.seq <= prev {
                return Err(ProtocolError::Sequence { previous: prev, found: msg.seq });
            }
        }
        self.last_seen = Some(msg.seq);
        Ok(msg)
    }
}
