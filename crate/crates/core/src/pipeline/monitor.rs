use std::collections::BTreeMap;

use serde::Serialize;

use super::kqi::KqiMessage;
use super::PipelineError;
use crate::features::{FeatureVector, Scaler, FEATURE_COUNT};
use crate::models::TrainedModel;

/// Features of a session from its messages so far, taken from the latest one.
pub fn aggregate_window(messages: &[KqiMessage]) -> Result<FeatureVector, PipelineError> {
    let last = messages.last().ok_or(PipelineError::EmptyWindow)?;
    for w in messages.windows(2) {
        if w[1].session_id != w[0].session_id {
            return Err(PipelineError::InvalidWindow(format!(
                "mixes sessions `{}` and `{}`",
                w[0].session_id, w[1].session_id
            )));
        }
        if !(w[1].emit_time_s > w[0].emit_time_s) {
            return Err(PipelineError::InvalidWindow(format!(
                "session `{}`: emit times not increasing ({} then {})",
                w[0].session_id, w[0].emit_time_s, w[1].emit_time_s
            )));
        }
    }
    Ok(last.summary().features())
}

/// Standardizes `fv`, predicts, and clamps to [0, 1].
pub fn predict_live(model: &TrainedModel, scaler: &Scaler, fv: &FeatureVector) -> Result<f64, PipelineError> {
    if scaler.width() != FEATURE_COUNT {
        return Err(PipelineError::ScalerWidth {
            expected: FEATURE_COUNT,
            got: scaler.width(),
        });
    }
    let mut row = fv.to_array();
    scaler.transform_row(&mut row);
    Ok(model.predict_row(&row)?.clamp(0.0, 1.0))
}

/// One entry of the stored-QoE log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub delivered_s: f64,
    pub emit_time_s: f64,
    pub session_id: String,
    pub eos: bool,
    pub predicted_qoe: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Latest {
    pub features: FeatureVector,
    pub elapsed_media_s: f64,
    pub emit_time_s: f64,
    pub predicted_qoe: f64,
}

/// Receives delivered messages, keeps each session's window and logs predictions.
pub struct FeatureMonitor<'a> {
    model: &'a TrainedModel,
    scaler: &'a Scaler,
    windows: BTreeMap<String, Vec<KqiMessage>>,
    latest: BTreeMap<String, Latest>,
    log: Vec<PredictionRecord>,
}

impl<'a> FeatureMonitor<'a> {
    pub fn new(model: &'a TrainedModel, scaler: &'a Scaler) -> Self {
        Self {
            model,
            scaler,
            windows: BTreeMap::new(),
            latest: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<f64, PipelineError> {
        predict_live(self.model, self.scaler, fv)
    }

    /// Handles one message at its delivery time and returns the prediction.
    pub fn deliver(&mut self, msg: KqiMessage, delivered_s: f64) -> Result<f64, PipelineError> {
        let window = self.windows.entry(msg.session_id.clone()).or_default();
        window.push(msg);
        let features = match aggregate_window(window) {
            Ok(f) => f,
            Err(e) => {
                window.pop();
                return Err(e);
            }
        };
        let msg = window.last().expect("just pushed");
        let predicted_qoe = predict_live(self.model, self.scaler, &features)?;
        self.log.push(PredictionRecord {
            delivered_s,
            emit_time_s: msg.emit_time_s,
            session_id: msg.session_id.clone(),
            eos: msg.eos,
            predicted_qoe,
        });
        self.latest.insert(
            msg.session_id.clone(),
            Latest {
                features,
                elapsed_media_s: msg.elapsed_media_s,
                emit_time_s: msg.emit_time_s,
                predicted_qoe,
            },
        );
        Ok(predicted_qoe)
    }

    pub(crate) fn latest(&self, session_id: &str) -> Option<&Latest> {
        self.latest.get(session_id)
    }

    pub fn window(&self, session_id: &str) -> &[KqiMessage] {
        self.windows.get(session_id).map_or(&[], Vec::as_slice)
    }

    pub fn log(&self) -> &[PredictionRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<PredictionRecord> {
        self.log
    }
}

/// Feeds a recorded message log through a fresh monitor, each message
/// delivered `latency_s` after its emission.
pub fn replay(
    messages: &[KqiMessage],
    latency_s: f64,
    model: &TrainedModel,
    scaler: &Scaler,
) -> Result<Vec<PredictionRecord>, PipelineError> {
    let mut order: Vec<usize> = (0..messages.len()).collect();
    order.sort_by(|&a, &b| {
        (messages[a].emit_time_s + latency_s).total_cmp(&(messages[b].emit_time_s + latency_s))
    });
    let mut m = FeatureMonitor::new(model, scaler);
    for i in order {
        let msg = messages[i].clone();
        let at = msg.emit_time_s + latency_s;
        m.deliver(msg, at)?;
    }
    Ok(m.into_log())
}
