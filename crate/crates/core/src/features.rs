//! The ten QoE features of a session and training-set standardization.
//!
//! Conventions: stalling frequency (f4) and ratio (f5) divide by the media
//! duration, not the stall-inclusive playback length. The recency feature (f6)
//! is measured on the media timeline from the last stall start to the media end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::session::{Segment, StallEvent, StreamingSession};

pub const FEATURE_COUNT: usize = 10;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] =
    ["f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9", "f10"];

/// Parameters of the visual-quality-index stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqiConfig {
    /// Saturation rate per Mbps of effective bitrate.
    pub k: f64,
}

/// 5000 kbps at full device resolution maps to 1 + 4(1 - e^-4) ~= 4.927.
pub const DEFAULT_VQI_K: f64 = 0.8;

impl Default for VqiConfig {
    fn default() -> Self {
        Self { k: DEFAULT_VQI_K }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub f1_initial_loading_s: f64,
    pub f2_stall_count: f64,
    pub f3_total_stall_s: f64,
    pub f4_stall_freq_per_s: f64,
    pub f5_stall_ratio: f64,
    pub f6_last_stall_gap_s: f64,
    pub f7_mean_bitrate_kbps: f64,
    pub f8_framerate_fps: f64,
    pub f9_median_quality_layer: f64,
    pub f10_visual_quality_index: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.f1_initial_loading_s,
            self.f2_stall_count,
            self.f3_total_stall_s,
            self.f4_stall_freq_per_s,
            self.f5_stall_ratio,
            self.f6_last_stall_gap_s,
            self.f7_mean_bitrate_kbps,
            self.f8_framerate_fps,
            self.f9_median_quality_layer,
            self.f10_visual_quality_index,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            f1_initial_loading_s: a[0],
            f2_stall_count: a[1],
            f3_total_stall_s: a[2],
            f4_stall_freq_per_s: a[3],
            f5_stall_ratio: a[4],
            f6_last_stall_gap_s: a[5],
            f7_mean_bitrate_kbps: a[6],
            f8_framerate_fps: a[7],
            f9_median_quality_layer: a[8],
            f10_visual_quality_index: a[9],
        }
    }
}

/// Cumulative per-session quantities from which the features are derived.
///
/// Offline extraction and the live monitoring path both go through this type,
/// so a completed session yields identical features on either path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub initial_loading_s: f64,
    pub stall_count: u32,
    pub total_stall_s: f64,
    pub last_stall_media_s: Option<f64>,
    /// Media seconds played so far (the whole media duration once finished).
    pub media_s: f64,
    pub mean_bitrate_kbps: f64,
    pub framerate_fps: f64,
    pub median_layer: u32,
    pub vqi: f64,
}

/// Per-segment visual quality on the 1–5 scale.
pub fn segment_quality(seg: &Segment, device_pixels: f64, cfg: &VqiConfig) -> f64 {
    let ratio = if device_pixels > 0.0 {
        (seg.pixels() / device_pixels).min(1.0)
    } else {
        1.0
    };
    let effective_mbps = seg.bitrate_kbps.max(0.0) * ratio / 1000.0;
    let q = 1.0 + 4.0 * (1.0 - (-cfg.k * effective_mbps).exp());
    q.clamp(1.0, 5.0)
}

/// Duration-weighted mean of [`segment_quality`] over the segments.
pub fn vqi_of_segments(segments: &[Segment], device_pixels: f64, cfg: &VqiConfig) -> f64 {
    let total: f64 = segments.iter().map(|s| s.duration_s).sum();
    if total <= 0.0 {
        return 1.0;
    }
    let weighted: f64 = segments
        .iter()
        .map(|s| segment_quality(s, device_pixels, cfg) * s.duration_s)
        .sum();
    (weighted / total).clamp(1.0, 5.0)
}

pub fn visual_quality_index(s: &StreamingSession, cfg: &VqiConfig) -> f64 {
    vqi_of_segments(&s.segments, s.device_pixels(), cfg)
}

/// Duration-weighted mean bitrate; 0 for an empty slice.
pub fn mean_bitrate(segments: &[Segment]) -> f64 {
    let total: f64 = segments.iter().map(|s| s.duration_s).sum();
    if total <= 0.0 {
        return 0.0;
    }
    segments
        .iter()
        .map(|s| s.bitrate_kbps * s.duration_s)
        .sum::<f64>()
        / total
}

/// Median quality layer, lower middle on even counts; 0 for an empty slice.
pub fn median_layer(segments: &[Segment]) -> u32 {
    if segments.is_empty() {
        return 0;
    }
    let mut layers: Vec<u32> = segments.iter().map(|s| s.quality_layer).collect();
    layers.sort_unstable();
    layers[(layers.len() - 1) / 2]
}

impl SessionSummary {
    /// Summary over the played prefix of a session.
    pub fn of_prefix(
        initial_loading_s: f64,
        played_segments: &[Segment],
        stalls: &[StallEvent],
        media_s: f64,
        framerate_fps: f64,
        device_pixels: f64,
        cfg: &VqiConfig,
    ) -> Self {
        Self {
            initial_loading_s,
            stall_count: stalls.len() as u32,
            total_stall_s: stalls.iter().map(|s| s.duration_s).fold(0.0, |a, b| a + b),
            last_stall_media_s: stalls.last().map(|s| s.start_media_time_s),
            media_s,
            mean_bitrate_kbps: mean_bitrate(played_segments),
            framerate_fps,
            median_layer: median_layer(played_segments),
            vqi: vqi_of_segments(played_segments, device_pixels, cfg),
        }
    }

    pub fn of_session(s: &StreamingSession, cfg: &VqiConfig) -> Self {
        Self::of_prefix(
            s.initial_loading_time_s,
            &s.segments,
            &s.stalls,
            s.media_duration_s(),
            s.framerate_fps,
            s.device_pixels(),
            cfg,
        )
    }

    pub fn features(&self) -> FeatureVector {
        let count = f64::from(self.stall_count);
        let (freq, ratio) = if self.media_s > 0.0 {
            (count / self.media_s, self.total_stall_s / self.media_s)
        } else {
            (0.0, 0.0)
        };
        let gap = match self.last_stall_media_s {
            Some(t) => (self.media_s - t).max(0.0),
            None => self.media_s,
        };
        FeatureVector {
            f1_initial_loading_s: self.initial_loading_s,
            f2_stall_count: count,
            f3_total_stall_s: self.total_stall_s,
            f4_stall_freq_per_s: freq,
            f5_stall_ratio: ratio,
            f6_last_stall_gap_s: gap,
            f7_mean_bitrate_kbps: self.mean_bitrate_kbps,
            f8_framerate_fps: self.framerate_fps,
            f9_median_quality_layer: f64::from(self.median_layer),
            f10_visual_quality_index: self.vqi,
        }
    }
}

/// Features of a validated session.
pub fn extract_features(s: &StreamingSession, cfg: &VqiConfig) -> FeatureVector {
    SessionSummary::of_session(s, cfg).features()
}

pub fn feature_matrix(vectors: &[FeatureVector]) -> Matrix {
    let rows: Vec<[f64; FEATURE_COUNT]> = vectors.iter().map(FeatureVector::to_array).collect();
    Matrix::from_rows(&rows)
}

/// CSV with header `f1..f10`, plus a `mos_normalized` column when labels are given.
pub fn features_to_csv(vectors: &[FeatureVector], labels: Option<&[Option<f64>]>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    if labels.is_some() {
        header.push("mos_normalized");
    }
    w.write_record(&header).expect("in-memory write");
    for (i, v) in vectors.iter().enumerate() {
        let mut rec: Vec<String> = v.to_array().iter().map(|x| x.to_string()).collect();
        if let Some(l) = labels {
            rec.push(l[i].map(|x| x.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("scaler needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("expected {expected} feature columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("non-finite value in feature matrix")]
    NonFinite,
}

/// Per-column standardization statistics fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    /// Columns whose standard deviation is zero; they transform to 0.
    pub degenerate: Vec<bool>,
}

pub fn fit_scaler(x: &Matrix) -> Result<Scaler, FeatureError> {
    let n = x.rows();
    if n < 2 {
        return Err(FeatureError::TooFewSamples(n));
    }
    if !x.is_finite() {
        return Err(FeatureError::NonFinite);
    }
    let nf = n as f64;
    let mut mean = Vec::with_capacity(x.cols());
    let mut std = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let m = (0..n).map(|i| x.get(i, j)).sum::<f64>() / nf;
        let var = (0..n).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / nf;
        mean.push(m);
        std.push(var.sqrt());
    }
    let degenerate = std.iter().map(|&s| s == 0.0).collect();
    Ok(Scaler {
        mean,
        std,
        degenerate,
    })
}

impl Scaler {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix, FeatureError> {
        if x.cols() != self.width() {
            return Err(FeatureError::ColumnMismatch {
                expected: self.width(),
                got: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.transform_row(out.row_mut(i));
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if self.degenerate[j] {
                0.0
            } else {
                (*v - self.mean[j]) / self.std[j]
            };
        }
    }
}

pub fn transform(sc: &Scaler, x: &Matrix) -> Result<Matrix, FeatureError> {
    sc.transform(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::tests::{hand_session, unit_segments};
    use proptest::prelude::*;

    #[test]
    fn no_stall_session() {
        let mut s = hand_session();
        s.segments = unit_segments(10);
        s.stalls.clear();
        let f = extract_features(&s, &VqiConfig::default());
        assert_eq!(f.f2_stall_count, 0.0);
        assert_eq!(f.f3_total_stall_s, 0.0);
        assert_eq!(f.f4_stall_freq_per_s, 0.0);
        assert_eq!(f.f5_stall_ratio, 0.0);
        assert_eq!(f.f6_last_stall_gap_s, 10.0);
    }

    #[test]
    fn hand_session_features() {
        let f = extract_features(&hand_session(), &VqiConfig::default());
        assert_eq!(f.f1_initial_loading_s, 1.0);
        assert_eq!(f.f2_stall_count, 2.0);
        assert_eq!(f.f3_total_stall_s, 2.0);
        assert_eq!(f.f4_stall_freq_per_s, 2.0 / 13.0);
        assert_eq!(f.f5_stall_ratio, 2.0 / 13.0);
        assert_eq!(f.f6_last_stall_gap_s, 5.0);
        assert_eq!(f.f8_framerate_fps, 30.0);
        assert_eq!(f.f9_median_quality_layer, 1.0);
    }

    #[test]
    fn weighted_mean_bitrate() {
        let mut s = hand_session();
        s.stalls.clear();
        s.segments = unit_segments(2);
        s.segments[0].bitrate_kbps = 1000.0;
        s.segments[1].bitrate_kbps = 3000.0;
        s.segments[1].duration_s = 3.0;
        assert_eq!(extract_features(&s, &VqiConfig::default()).f7_mean_bitrate_kbps, 2500.0);
    }

    #[test]
    fn median_uses_lower_middle() {
        let mut segs = unit_segments(4);
        for (s, l) in segs.iter_mut().zip([3, 0, 2, 1]) {
            s.quality_layer = l;
        }
        assert_eq!(median_layer(&segs), 1);
        assert_eq!(median_layer(&segs[..3]), 2);
    }

    #[test]
    fn vqi_anchors() {
        let mut s = hand_session();
        s.segments = unit_segments(1);
        s.segments[0].bitrate_kbps = 1e-12;
        assert!((visual_quality_index(&s, &VqiConfig::default()) - 1.0).abs() < 1e-9);

        s.segments[0].bitrate_kbps = 5000.0;
        s.segments[0].width_px = s.device_width_px;
        s.segments[0].height_px = s.device_height_px;
        let v = visual_quality_index(&s, &VqiConfig::default());
        // 1 + 4 (1 - e^{-0.8 * 5})
        assert!((v - 4.926_737_444).abs() < 1e-8, "{v}");
        assert!(v >= 4.9);
    }

    #[test]
    fn higher_bitrate_raises_vqi() {
        let a = hand_session();
        let mut b = a.clone();
        for s in &mut b.segments {
            s.bitrate_kbps *= 1.5;
        }
        let cfg = VqiConfig::default();
        assert!(visual_quality_index(&b, &cfg) > visual_quality_index(&a, &cfg));
    }

    #[test]
    fn scaler_two_points() {
        let sc = fit_scaler(&Matrix::from_rows(&[[0.0], [2.0]])).unwrap();
        assert_eq!(sc.mean, vec![1.0]);
        assert_eq!(sc.std, vec![1.0]);
        assert_eq!(sc.degenerate, vec![false]);
    }

    #[test]
    fn scaler_population_sigma() {
        let sc = fit_scaler(&Matrix::from_rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])).unwrap();
        assert_eq!(sc.mean, vec![2.0, 5.0]);
        assert!((sc.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(sc.degenerate, vec![false, true]);
        let t = sc.transform(&Matrix::from_rows(&[[2.0, 5.0], [7.0, 9.0]])).unwrap();
        assert_eq!(t.row(0), &[0.0, 0.0]);
        assert_eq!(t.get(1, 1), 0.0);
    }

    #[test]
    fn scaler_errors() {
        assert_eq!(
            fit_scaler(&Matrix::from_rows(&[[1.0]])),
            Err(FeatureError::TooFewSamples(1))
        );
        let sc = fit_scaler(&Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        assert_eq!(
            sc.transform(&Matrix::from_rows(&[[1.0]])),
            Err(FeatureError::ColumnMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn csv_header() {
        let f = extract_features(&hand_session(), &VqiConfig::default());
        let csv = features_to_csv(&[f], Some(&[Some(0.5)]));
        let first = csv.lines().next().unwrap();
        assert_eq!(first, "f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,mos_normalized");
        assert_eq!(csv.lines().count(), 2);
    }

    proptest! {
        #[test]
        fn standardized_columns(rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..40)) {
            let x = Matrix::from_rows(&rows);
            let sc = fit_scaler(&x).unwrap();
            let t = sc.transform(&x).unwrap();
            for j in 0..3 {
                let col = t.column(j);
                let n = col.len() as f64;
                let m = col.iter().sum::<f64>() / n;
                prop_assert!(m.abs() < 1e-9);
                if !sc.degenerate[j] && sc.std[j] > 1e-6 {
                    let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!((sd - 1.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn vqi_monotone_in_bitrate(bitrates in prop::collection::vec(10.0f64..10_000.0, 1..15), which in 0usize..15, bump in 1.0f64..2000.0) {
            let mut s = hand_session();
            s.stalls.clear();
            s.segments = unit_segments(bitrates.len() as u32);
            for (seg, b) in s.segments.iter_mut().zip(&bitrates) {
                seg.bitrate_kbps = *b;
            }
            let cfg = VqiConfig::default();
            let before = visual_quality_index(&s, &cfg);
            let i = which % bitrates.len();
            s.segments[i].bitrate_kbps += bump;
            prop_assert!(visual_quality_index(&s, &cfg) >= before);
        }
    }
}
