//! HAS session data model, validation, and ingestion.
//!
//! Stall timestamps live on the media timeline: `start_media_time_s` is the
//! playback position at which the buffer ran dry, so stall durations never
//! shift later stall positions. Wall-clock length is derived as
//! `initial_loading + media_duration + sum(stall durations)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One downloaded media segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub index: u32,
    pub duration_s: f64,
    pub bitrate_kbps: f64,
    pub width_px: u32,
    pub height_px: u32,
    /// Representation index, 0 is the lowest.
    pub quality_layer: u32,
}

impl Segment {
    pub fn pixels(&self) -> f64 {
        f64::from(self.width_px) * f64::from(self.height_px)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StallEvent {
    pub start_media_time_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamingSession {
    pub session_id: String,
    pub initial_loading_time_s: f64,
    pub segments: Vec<Segment>,
    pub stalls: Vec<StallEvent>,
    pub framerate_fps: f64,
    pub device_width_px: u32,
    pub device_height_px: u32,
    pub abr_id: Option<String>,
    pub trace_id: Option<String>,
    /// Number of representations in the manifest, when known. Bounds `quality_layer`.
    pub representation_count: Option<u32>,
}

impl StreamingSession {
    pub fn media_duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).fold(0.0, |a, b| a + b)
    }

    pub fn total_stall_s(&self) -> f64 {
        self.stalls.iter().map(|s| s.duration_s).fold(0.0, |a, b| a + b)
    }

    pub fn wall_duration_s(&self) -> f64 {
        self.initial_loading_time_s + self.media_duration_s() + self.total_stall_s()
    }

    pub fn device_pixels(&self) -> f64 {
        f64::from(self.device_width_px) * f64::from(self.device_height_px)
    }
}

/// A session with its normalized MOS. `None` marks an unlabeled (live) session.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSession {
    pub session: StreamingSession,
    pub mos_normalized: Option<f64>,
}

impl LabeledSession {
    pub fn unlabeled(session: StreamingSession) -> Self {
        Self {
            session,
            mos_normalized: None,
        }
    }
}

/// The invariant a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    AtLeastOneSegment,
    Positive,
    NonNegative,
    LayerInRange,
    SegmentIndexIncreasing,
    StallWithinMedia,
    StallsSorted,
    StallsNonOverlapping,
    LabelInRange,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::AtLeastOneSegment => "at least one segment",
            Rule::Positive => "must be finite and strictly positive",
            Rule::NonNegative => "must be finite and non-negative",
            Rule::LayerInRange => "quality layer outside the manifest's representations",
            Rule::SegmentIndexIncreasing => "segment indices must be strictly increasing",
            Rule::StallWithinMedia => "stall starts beyond the media duration",
            Rule::StallsSorted => "stalls must be sorted by start_media_time_s",
            Rule::StallsNonOverlapping => "non-overlapping: two stalls at the same media position",
            Rule::LabelInRange => "label must lie in [0, 1]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Violation {
    /// Path of the offending field, e.g. `stalls[1].start_media_time_s`.
    pub field: String,
    pub rule: Rule,
}

impl Violation {
    fn new(field: impl Into<String>, rule: Rule) -> Self {
        Self {
            field: field.into(),
            rule,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule.describe())
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn non_negative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Checks every session invariant and returns all violations found.
pub fn validate_session(s: &StreamingSession) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();

    if !non_negative(s.initial_loading_time_s) {
        out.push(Violation::new("initial_loading_time_s", Rule::NonNegative));
    }
    if !positive(s.framerate_fps) {
        out.push(Violation::new("framerate_fps", Rule::Positive));
    }
    if s.device_width_px == 0 {
        out.push(Violation::new("device_width_px", Rule::Positive));
    }
    if s.device_height_px == 0 {
        out.push(Violation::new("device_height_px", Rule::Positive));
    }

    if s.segments.is_empty() {
        out.push(Violation::new("segments", Rule::AtLeastOneSegment));
    }
    for (i, seg) in s.segments.iter().enumerate() {
        if !positive(seg.duration_s) {
            out.push(Violation::new(format!("segments[{i}].duration_s"), Rule::Positive));
        }
        if !positive(seg.bitrate_kbps) {
            out.push(Violation::new(format!("segments[{i}].bitrate_kbps"), Rule::Positive));
        }
        if seg.width_px == 0 {
            out.push(Violation::new(format!("segments[{i}].width_px"), Rule::Positive));
        }
        if seg.height_px == 0 {
            out.push(Violation::new(format!("segments[{i}].height_px"), Rule::Positive));
        }
        if let Some(count) = s.representation_count {
            if seg.quality_layer >= count {
                out.push(Violation::new(
                    format!("segments[{i}].quality_layer"),
                    Rule::LayerInRange,
                ));
            }
        }
        if i > 0 && seg.index <= s.segments[i - 1].index {
            out.push(Violation::new(
                format!("segments[{i}].index"),
                Rule::SegmentIndexIncreasing,
            ));
        }
    }

    let media = s.media_duration_s();
    for (i, st) in s.stalls.iter().enumerate() {
        if !non_negative(st.start_media_time_s) {
            out.push(Violation::new(
                format!("stalls[{i}].start_media_time_s"),
                Rule::NonNegative,
            ));
        } else if !s.segments.is_empty() && st.start_media_time_s > media {
            out.push(Violation::new(
                format!("stalls[{i}].start_media_time_s"),
                Rule::StallWithinMedia,
            ));
        }
        if !positive(st.duration_s) {
            out.push(Violation::new(format!("stalls[{i}].duration_s"), Rule::Positive));
        }
        if i > 0 {
            let prev = s.stalls[i - 1].start_media_time_s;
            if st.start_media_time_s < prev {
                out.push(Violation::new(
                    format!("stalls[{i}].start_media_time_s"),
                    Rule::StallsSorted,
                ));
            } else if st.start_media_time_s == prev {
                out.push(Violation::new(
                    format!("stalls[{i}].start_media_time_s"),
                    Rule::StallsNonOverlapping,
                ));
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn validate_labeled(s: &LabeledSession) -> Result<(), Vec<Violation>> {
    let mut out = validate_session(&s.session).err().unwrap_or_default();
    if let Some(m) = s.mos_normalized {
        if !(0.0..=1.0).contains(&m) {
            out.push(Violation::new("mos_normalized", Rule::LabelInRange));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

// ---------------------------------------------------------------------------
// JSON-lines session log
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SessionRecord {
    session_id: String,
    initial_loading_time_s: f64,
    framerate_fps: f64,
    device_width_px: u32,
    device_height_px: u32,
    segments: Vec<Segment>,
    stalls: Vec<StallEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mos_normalized: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    abr_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    representation_count: Option<u32>,
}

impl From<SessionRecord> for LabeledSession {
    fn from(r: SessionRecord) -> Self {
        LabeledSession {
            session: StreamingSession {
                session_id: r.session_id,
                initial_loading_time_s: r.initial_loading_time_s,
                segments: r.segments,
                stalls: r.stalls,
                framerate_fps: r.framerate_fps,
                device_width_px: r.device_width_px,
                device_height_px: r.device_height_px,
                abr_id: r.abr_id,
                trace_id: r.trace_id,
                representation_count: r.representation_count,
            },
            mos_normalized: r.mos_normalized,
        }
    }
}

impl From<&LabeledSession> for SessionRecord {
    fn from(l: &LabeledSession) -> Self {
        let s = &l.session;
        SessionRecord {
            session_id: s.session_id.clone(),
            initial_loading_time_s: s.initial_loading_time_s,
            framerate_fps: s.framerate_fps,
            device_width_px: s.device_width_px,
            device_height_px: s.device_height_px,
            segments: s.segments.clone(),
            stalls: s.stalls.clone(),
            mos_normalized: l.mos_normalized,
            abr_id: s.abr_id.clone(),
            trace_id: s.trace_id.clone(),
            representation_count: s.representation_count,
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid session: {}", join_violations(.violations))]
    Invalid {
        line: usize,
        violations: Vec<Violation>,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Parses a JSON-lines session log. Blank lines are skipped; line numbers are 1-based.
pub fn parse_session_log(bytes: &[u8]) -> Result<Vec<LabeledSession>, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::Malformed {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: "invalid UTF-8".into(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SessionRecord =
            serde_json::from_str(line).map_err(|e| ParseError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let labeled = LabeledSession::from(record);
        validate_labeled(&labeled).map_err(|violations| ParseError::Invalid {
            line: line_no,
            violations,
        })?;
        out.push(labeled);
    }
    Ok(out)
}

/// Writes sessions in the JSON-lines log format, one object per line.
pub fn serialize_session_log(sessions: &[LabeledSession]) -> String {
    let mut out = String::new();
    for s in sessions {
        let line = serde_json::to_string(&SessionRecord::from(s)).expect("session serializes");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Subjective-database CSV import
// ---------------------------------------------------------------------------

/// Logical fields the CSV adapter understands. Each maps to a column name.
pub const CSV_REQUIRED_FIELDS: &[&str] = &[
    "mos",
    "initial_loading_time_s",
    "stall_count",
    "total_stall_s",
    "last_stall_media_s",
    "media_duration_s",
    "mean_bitrate_kbps",
    "framerate_fps",
    "median_quality_layer",
    "width_px",
    "height_px",
];

pub const CSV_OPTIONAL_FIELDS: &[&str] = &[
    "session_id",
    "device_width_px",
    "device_height_px",
    "segment_count",
];

/// Field → column-name map, loaded from a small JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CsvMapping(pub BTreeMap<String, String>);

impl CsvMapping {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ImportError> {
        serde_json::from_slice(bytes).map_err(|e| ImportError::Mapping(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("mapping is not a JSON object of strings: {0}")]
    Mapping(String),
    #[error("configuration error: mapping does not name a column for required field `{0}`")]
    MissingMapping(String),
    #[error("column `{column}` (mapped from `{field}`) is not in the CSV header")]
    MissingColumn { field: String, column: String },
    #[error("scale_max must be finite and > 0, got {0}")]
    BadScale(f64),
    #[error("row {row}: MOS {value} outside [0, {scale_max}]")]
    MosOutOfRange { row: usize, value: f64, scale_max: f64 },
    #[error("row {row}: column `{column}` has unparsable value `{value}`")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: invalid session: {}", join_violations(.violations))]
    Invalid {
        row: usize,
        violations: Vec<Violation>,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Imports per-session aggregate rows (one row per session) and rebuilds a
/// [`StreamingSession`] whose features reproduce the row's aggregates.
///
/// The rebuilt session has `segment_count` equal segments (default 1) at the
/// row's mean bitrate and median layer, and `stall_count` stalls of equal
/// duration spaced evenly on the media timeline so that the last one starts at
/// `last_stall_media_s`.
pub fn import_subjective_csv(
    bytes: &[u8],
    mapping: &CsvMapping,
    scale_max: f64,
) -> Result<Vec<LabeledSession>, ImportError> {
    if !(scale_max.is_finite() && scale_max > 0.0) {
        return Err(ImportError::BadScale(scale_max));
    }
    for f in CSV_REQUIRED_FIELDS {
        if !mapping.0.contains_key(*f) {
            return Err(ImportError::MissingMapping((*f).to_string()));
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let mut columns: BTreeMap<&str, usize> = BTreeMap::new();
    for (field, column) in &mapping.0 {
        if !CSV_REQUIRED_FIELDS.contains(&field.as_str())
            && !CSV_OPTIONAL_FIELDS.contains(&field.as_str())
        {
            continue;
        }
        let idx = headers
            .iter()
            .position(|h| h.trim() == column)
            .ok_or_else(|| ImportError::MissingColumn {
                field: field.clone(),
                column: column.clone(),
            })?;
        columns.insert(field.as_str(), idx);
    }

    let mut out = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let num = |field: &str| -> Result<Option<f64>, ImportError> {
            let Some(&idx) = columns.get(field) else {
                return Ok(None);
            };
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>()
                .map(Some)
                .map_err(|_| ImportError::BadValue {
                    row,
                    column: mapping.0[field].clone(),
                    value: raw.to_string(),
                })
        };
        let req = |field: &str| num(field).map(|v| v.expect("required field is mapped"));
        let count = |field: &str, v: f64| -> Result<u32, ImportError> {
            if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
                Ok(v as u32)
            } else {
                Err(ImportError::BadValue {
                    row,
                    column: mapping.0[field].clone(),
                    value: v.to_string(),
                })
            }
        };

        let mos = req("mos")?;
        if !(0.0..=scale_max).contains(&mos) {
            return Err(ImportError::MosOutOfRange {
                row,
                value: mos,
                scale_max,
            });
        }
        let media = req("media_duration_s")?;
        let stall_count = count("stall_count", req("stall_count")?)?;
        let total_stall = req("total_stall_s")?;
        let last_stall = req("last_stall_media_s")?;
        let width = count("width_px", req("width_px")?)?;
        let height = count("height_px", req("height_px")?)?;
        let layer = count("median_quality_layer", req("median_quality_layer")?)?;
        let bitrate = req("mean_bitrate_kbps")?;
        let seg_count = match num("segment_count")? {
            Some(v) => count("segment_count", v)?.max(1),
            None => 1,
        };
        let device_w = match num("device_width_px")? {
            Some(v) => count("device_width_px", v)?,
            None => width,
        };
        let device_h = match num("device_height_px")? {
            Some(v) => count("device_height_px", v)?,
            None => height,
        };
        let session_id = match columns.get("session_id") {
            Some(&idx) => record.get(idx).unwrap_or("").trim().to_string(),
            None => format!("row-{row}"),
        };

        let seg_dur = media / f64::from(seg_count);
        let segments = (0..seg_count)
            .map(|i| Segment {
                index: i,
                duration_s: seg_dur,
                bitrate_kbps: bitrate,
                width_px: width,
                height_px: height,
                quality_layer: layer,
            })
            .collect();
        let stalls = (0..stall_count)
            .map(|j| StallEvent {
                start_media_time_s: last_stall * f64::from(j + 1) / f64::from(stall_count),
                duration_s: total_stall / f64::from(stall_count),
            })
            .collect();

        let labeled = LabeledSession {
            session: StreamingSession {
                session_id,
                initial_loading_time_s: req("initial_loading_time_s")?,
                segments,
                stalls,
                framerate_fps: req("framerate_fps")?,
                device_width_px: device_w,
                device_height_px: device_h,
                abr_id: None,
                trace_id: None,
                representation_count: None,
            },
            mos_normalized: Some(mos / scale_max),
        };
        validate_labeled(&labeled).map_err(|violations| ImportError::Invalid { row, violations })?;
        out.push(labeled);
    }
    Ok(out)
}
