//! Engine side of a runner connection.

use std::collections::BTreeMap;
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use super::{
    Body, Bye, Capabilities, Connection, DataManifest, ErrorBody, ErrorCode, Hello, Message, Phase,
    PredictRequest, Predictions, Progress, ProtocolError, TaskOffer, TrainRequest, PROTOCOL_VERSION,
};
use crate::config::TaskSpec;
use crate::domain::{ObjectiveKind, Prediction, SplitLabel};

#[derive(Clone, Debug, PartialEq)]
pub enum OfferReply {
    Accepted,
    Declined(String),
}

pub struct RunnerClient {
    conn: Connection,
    child: Option<Child>,
    pub capabilities: Option<Capabilities>,
}

fn unexpected(expected: &str, msg: Message) -> ProtocolError {
    match msg.body {
        Body::Error(ErrorBody { code, message }) => ProtocolError::Remote { code, message },
        other => ProtocolError::UnexpectedKind { expected: expected.to_string(), found: other.kind() },
    }
}

impl RunnerClient {
    /// Starts `command[0]` with the remaining arguments, talking over its stdio.
    pub fn spawn(command: &[String], timeout: Duration) -> Result<RunnerClient, ProtocolError> {
        let (prog, args) = command.split_first().ok_or_else(|| ProtocolError::Spawn("empty command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProtocolError::Spawn(format!("{prog}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(RunnerClient { conn: Connection::new(stdout, stdin, Some(timeout)), child: Some(child), capabilities: None })
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<RunnerClient, ProtocolError> {
        let stream = TcpStream::connect(addr)?;
        let reader = stream.try_clone()?;
        Ok(RunnerClient { conn: Connection::new(reader, stream, Some(timeout)), child: None, capabilities: None })
    }

    pub fn from_connection(conn: Connection) -> RunnerClient {
        RunnerClient { conn, child: None, capabilities: None }
    }

    pub fn connection(&mut self) -> &mut Connection {
        &mut self.conn
    }

    pub fn handshake(&mut self) -> Result<Capabilities, ProtocolError> {
        self.conn.send(Body::Hello(Hello {
            engine: format!("nbench {}", env!("CARGO_PKG_VERSION")),
            versions: vec![PROTOCOL_VERSION],
        }))?;
        let msg = self.conn.recv("capabilities")?;
        match msg.body {
            Body::Capabilities(c) => {
                self.capabilities = Some(c.clone());
                Ok(c)
            }
            _ => Err(unexpected("capabilities", msg)),
        }
    }

    pub fn offer(&mut self, task: &TaskSpec, seed: u64, n_outputs: usize) -> Result<OfferReply, ProtocolError> {
        self.conn.send(Body::TaskOffer(Box::new(TaskOffer { task: task.clone(), seed, n_outputs })))?;
        let msg = self.conn.recv("offer reply")?;
        match msg.body {
            Body::Progress(Progress { phase: Phase::Accepted, .. }) => Ok(OfferReply::Accepted),
            Body::Error(ErrorBody { code: ErrorCode::Declined, message }) => Ok(OfferReply::Declined(message)),
            _ => Err(unexpected("progress(accepted)", msg)),
        }
    }

    /// Fails before sending when either referenced file is missing.
    pub fn send_data(&mut self, manifest: &DataManifest) -> Result<(), ProtocolError> {
        for (what, path) in [("cache file", &manifest.cache_path), ("split manifest", &manifest.split_manifest_path)] {
            if !path.is_file() {
                return Err(ProtocolError::MissingPath { what: what.to_string(), path: path.clone() });
            }
        }
        self.conn.send(Body::DataManifest(manifest.clone()))?;
        let msg = self.conn.recv("progress(ready)")?;
        match msg.body {
            Body::Progress(Progress { phase: Phase::Ready, .. }) => Ok(()),
            _ => Err(unexpected("progress(ready)", msg)),
        }
    }

    /// Blocks until `trained`; each progress message restarts the timeout. Returns declared deviations.
    pub fn train(
        &mut self,
        mut on_progress: impl FnMut(&Progress),
    ) -> Result<BTreeMap<String, serde_json::Value>, ProtocolError> {
        self.conn.send(Body::TrainRequest(TrainRequest {}))?;
        loop {
            let msg = self.conn.recv("training progress")?;
            match msg.body {
                Body::Progress(p) if p.phase == Phase::Trained => {
                    on_progress(&p);
                    return Ok(p.deviations);
                }
                Body::Progress(p) if p.phase == Phase::Training => on_progress(&p),
                _ => return Err(unexpected("progress(training|trained)", msg)),
            }
        }
    }

    /// Predictions for `split`, checked against `expected_ids` and the objective.
    pub fn predict(
        &mut self,
        split: SplitLabel,
        expected_ids: &[String],
        objective: ObjectiveKind,
        n_outputs: usize,
    ) -> Result<Vec<Prediction>, ProtocolError> {
        self.conn.send(Body::PredictRequest(PredictRequest { split }))?;
        let msg = self.conn.recv("predictions")?;
        match msg.body {
            Body::Predictions(p) => check_predictions(&p, expected_ids, objective, n_outputs),
            _ => Err(unexpected("predictions", msg)),
        }
    }

    /// Says goodbye and reaps the process, killing it if it lingers.
    pub fn close(mut self) -> Result<(), ProtocolError> {
        let said = self.conn.send(Body::Bye(Bye {})).and_then(|_| self.conn.recv("bye"));
        self.reap(Duration::from_secs(5));
        match said {
            Ok(Message { body: Body::Bye(_), .. }) => Ok(()),
            Ok(other) => Err(unexpected("bye", other)),
            Err(e) => Err(e),
        }
    }

    fn reap(&mut self, grace: Duration) {
        if let Some(mut child) = self.child.take() {
            let start = Instant::now();
            while start.elapsed() < grace {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Drop for RunnerClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Converts wire predictions into typed ones, rejecting anything malformed.
pub fn check_predictions(
    p: &Predictions,
    expected_ids: &[String],
    objective: ObjectiveKind,
    n_outputs: usize,
) -> Result<Vec<Prediction>, ProtocolError> {
    if p.values.len() != expected_ids.len() {
        return Err(ProtocolError::CountMismatch { expected: expected_ids.len(), found: p.values.len() });
    }
    if !p.example_ids.is_empty() {
        if p.example_ids.len() != expected_ids.len() {
            return Err(ProtocolError::CountMismatch { expected: expected_ids.len(), found: p.example_ids.len() });
        }
        if let Some(i) = (0..expected_ids.len()).find(|&i| p.example_ids[i] != expected_ids[i]) {
            return Err(ProtocolError::BadPrediction {
                index: i,
                reason: format!("example id {:?}, expected {:?}", p.example_ids[i], expected_ids[i]),
            });
        }
    }
    let width = if objective == ObjectiveKind::Regression { 1 } else { n_outputs };
    p.values
        .iter()
        .enumerate()
        .map(|(index, row)| {
            let values: Vec<f64> = row
                .iter()
                .map(|v| v.filter(|x| x.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| ProtocolError::BadPrediction { index, reason: "non-finite value".into() })?;
            if values.len() != width {
                return Err(ProtocolError::BadPrediction {
                    index,
                    reason: format!("{} values, expected n_outputs = {width}", values.len()),
                });
            }
            let pred = Prediction::from_values(objective, values);
            pred.validate().map_err(|e| ProtocolError::BadPrediction { index, reason: e.to_string() })?;
            Ok(pred)
        })
        .collect()
}
