//! Runner side: a message loop driving any [`RunnerModel`].

use std::collections::BTreeMap;

use super::{
    Body, Bye, Capabilities, Connection, DataManifest, ErrorBody, ErrorCode, Phase, Predictions, Progress,
    ProtocolError, TaskOffer,
};
use crate::domain::SplitLabel;

pub trait RunnerModel {
    fn capabilities(&self) -> Capabilities;

    /// `Err` declines the offer with a reason.
    fn offer(&mut self, offer: &TaskOffer) -> Result<(), String>;

    fn load(&mut self, manifest: &DataManifest) -> Result<(), String>;

    /// Returns the recipe deviations to declare.
    fn train(
        &mut self,
        progress: &mut dyn FnMut(Progress) -> Result<(), ProtocolError>,
    ) -> Result<BTreeMap<String, serde_json::Value>, String>;

    fn predict(&mut self, split: SplitLabel) -> Result<Predictions, String>;
}

fn reply_error(conn: &mut Connection, code: ErrorCode, message: String) -> Result<(), ProtocolError> {
    conn.send(Body::Error(ErrorBody { code, message })).map(|_| ())
}

/// Answers requests until `bye` or end of input.
pub fn serve(model: &mut dyn RunnerModel, conn: &mut Connection) -> Result<(), ProtocolError> {
    loop {
        let msg = match conn.recv("request") {
            Ok(m) => m,
            Err(ProtocolError::Closed) => return Ok(()),
            Err(ProtocolError::Malformed(e)) => {
                reply_error(conn, ErrorCode::BadRequest, e)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        match msg.body {
            Body::Hello(_) => {
                conn.send(Body::Capabilities(model.capabilities()))?;
            }
            Body::TaskOffer(offer) => match model.offer(&offer) {
                Ok(()) => {
                    conn.send(Body::Progress(Progress::phase(Phase::Accepted)))?;
                }
                Err(reason) => reply_error(conn, ErrorCode::Declined, reason)?,
            },
            Body::DataManifest(m) => match model.load(&m) {
                Ok(()) => {
                    conn.send(Body::Progress(Progress::phase(Phase::Ready)))?;
                }
                Err(e) => reply_error(conn, ErrorCode::BadRequest, e)?,
            },
            Body::TrainRequest(_) => {
                let outcome = {
                    let mut report = |p: Progress| conn.send(Body::Progress(p)).map(|_| ());
                    model.train(&mut report)
                };
                match outcome {
                    Ok(deviations) => {
                        conn.send(Body::Progress(Progress { deviations, ..Progress::phase(Phase::Trained) }))?;
                    }
                    Err(e) => reply_error(conn, ErrorCode::Internal, e)?,
                }
            }
            Body::PredictRequest(r) => match model.predict(r.split) {
                Ok(p) => {
                    conn.send(Body::Predictions(p))?;
                }
                Err(e) => reply_error(conn, ErrorCode::Internal, e)?,
            },
            Body::Bye(_) => {
                conn.send(Body::Bye(Bye {}))?;
                return Ok(());
            }
            other => reply_error(conn, ErrorCode::BadRequest, format!("a runner does not accept {}", other.kind()))?,
        }
    }
}
