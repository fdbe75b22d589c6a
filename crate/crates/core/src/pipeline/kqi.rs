use serde::{Deserialize, Serialize};

use super::{MonitoringConfig, PipelineError};
use crate::features::{SessionSummary, VqiConfig};
use crate::session::{StallEvent, StreamingSession};
use crate::synth::PlaybackSnapshot;

/// Cumulative KQIs of one session at one instant.
///
/// The first nine fields are the core wire record. The remaining ones carry
/// what the feature monitor needs to rebuild all ten features without access
/// to the session itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KqiMessage {
    pub session_id: String,
    pub emit_time_s: f64,
    pub stalls: u32,
    pub total_stall_s: f64,
    pub layer: u32,
    pub mean_bitrate_kbps: f64,
    pub initial_loading_s: f64,
    pub segments_played: u32,
    pub eos: bool,
    pub elapsed_media_s: f64,
    pub last_stall_media_s: Option<f64>,
    pub framerate_fps: f64,
    pub median_layer: u32,
    pub vqi: f64,
}

impl KqiMessage {
    fn from_summary(
        session_id: &str,
        emit_time_s: f64,
        s: &SessionSummary,
        layer: u32,
        segments_played: u32,
        eos: bool,
    ) -> Self {
        Self {
            session_id: session_id.to_string(),
            emit_time_s,
            stalls: s.stall_count,
            total_stall_s: s.total_stall_s,
            layer,
            mean_bitrate_kbps: s.mean_bitrate_kbps,
            initial_loading_s: s.initial_loading_s,
            segments_played,
            eos,
            elapsed_media_s: s.media_s,
            last_stall_media_s: s.last_stall_media_s,
            framerate_fps: s.framerate_fps,
            median_layer: s.median_layer,
            vqi: s.vqi,
        }
    }

    /// Mid-session message from a playback snapshot.
    pub fn from_snapshot(
        session_id: &str,
        snap: &PlaybackSnapshot,
        framerate_fps: f64,
        device_pixels: f64,
        vqi: &VqiConfig,
    ) -> Self {
        let summary = SessionSummary::of_prefix(
            snap.initial_loading_s,
            &snap.played,
            &snap.stalls,
            snap.media_position_s,
            framerate_fps,
            device_pixels,
            vqi,
        );
        Self::from_summary(
            session_id,
            snap.time_s,
            &summary,
            snap.current_layer.unwrap_or(0),
            snap.played.len() as u32,
            false,
        )
    }

    /// End-of-session message, built from the completed session.
    pub fn end_of_session(s: &StreamingSession, emit_time_s: f64, vqi: &VqiConfig) -> Self {
        Self::from_summary(
            &s.session_id,
            emit_time_s,
            &SessionSummary::of_session(s, vqi),
            s.segments.last().map_or(0, |g| g.quality_layer),
            s.segments.len() as u32,
            true,
        )
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            initial_loading_s: self.initial_loading_s,
            stall_count: self.stalls,
            total_stall_s: self.total_stall_s,
            last_stall_media_s: self.last_stall_media_s,
            media_s: self.elapsed_media_s,
            mean_bitrate_kbps: self.mean_bitrate_kbps,
            framerate_fps: self.framerate_fps,
            median_layer: self.median_layer,
            vqi: self.vqi,
        }
    }

    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

/// Newline-delimited JSON, one message per line.
pub fn write_wire(messages: &[KqiMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str(&m.to_wire());
        out.push('\n');
    }
    out
}

pub fn parse_wire(text: &str) -> Result<Vec<KqiMessage>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Wire {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Playback state of a completed session at wall time `t`, replayed from its record.
pub fn session_snapshot(s: &StreamingSession, t: f64) -> PlaybackSnapshot {
    let load = s.initial_loading_time_s;
    if t >= s.wall_duration_s() {
        return PlaybackSnapshot {
            time_s: t,
            started: true,
            finished: true,
            initial_loading_s: load,
            media_position_s: s.media_duration_s(),
            stalls: s.stalls.clone(),
            played: s.segments.clone(),
            current_layer: s.segments.last().map(|g| g.quality_layer),
        };
    }
    if t < load {
        return PlaybackSnapshot {
            time_s: t,
            started: false,
            finished: false,
            initial_loading_s: t,
            media_position_s: 0.0,
            stalls: Vec::new(),
            played: Vec::new(),
            current_layer: None,
        };
    }
    let mut left = t - load;
    let mut media = 0.0;
    let mut stalls = Vec::new();
    let mut done = false;
    for st in &s.stalls {
        let gap = st.start_media_time_s - media;
        if left <= gap {
            media += left;
            done = true;
            break;
        }
        left -= gap;
        media = st.start_media_time_s;
        if left < st.duration_s {
            stalls.push(StallEvent {
                start_media_time_s: st.start_media_time_s,
                duration_s: left,
            });
            done = true;
            break;
        }
        stalls.push(st.clone());
        left -= st.duration_s;
    }
    if !done {
        media = (media + left).min(s.media_duration_s());
    }
    let mut start = 0.0;
    let mut played = Vec::new();
    for g in &s.segments {
        if start >= media {
            break;
        }
        played.push(g.clone());
        start += g.duration_s;
    }
    PlaybackSnapshot {
        time_s: t,
        started: true,
        finished: false,
        initial_loading_s: load,
        media_position_s: media,
        current_layer: played.last().map(|g| g.quality_layer),
        stalls,
        played,
    }
}

/// Probe emission times strictly before `end_s`: `k / frequency` for `k >= 1`.
pub fn emission_times(end_s: f64, frequency_hz: f64) -> Vec<f64> {
    (1u64..)
        .map(|k| k as f64 / frequency_hz)
        .take_while(|&t| t < end_s)
        .collect()
}

/// Replays a completed session through the probe: one message per monitoring
/// tick before the session ends, then an end-of-session message.
pub fn probe_emit(
    s: &StreamingSession,
    cfg: &MonitoringConfig,
    vqi: &VqiConfig,
) -> Result<Vec<KqiMessage>, PipelineError> {
    cfg.validate()?;
    let end = s.wall_duration_s();
    let mut out: Vec<KqiMessage> = emission_times(end, cfg.frequency_hz)
        .into_iter()
        .map(|t| {
            KqiMessage::from_snapshot(
                &s.session_id,
                &session_snapshot(s, t),
                s.framerate_fps,
                s.device_pixels(),
                vqi,
            )
        })
        .collect();
    out.push(KqiMessage::end_of_session(s, end, vqi));
    Ok(out)
}
