use serde::{Deserialize, Serialize};

use super::SynthError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub quality_layer: u32,
    pub bitrate_kbps: f64,
    pub width_px: u32,
    pub height_px: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub segment_count: u32,
    pub segment_duration_s: f64,
    /// Ordered by layer; bitrates strictly increasing.
    pub representations: Vec<Representation>,
    pub framerate_fps: f64,
}

const LADDER: [(f64, u32, u32); 6] = [
    (235.0, 320, 180),
    (560.0, 640, 360),
    (1050.0, 854, 480),
    (1750.0, 1280, 720),
    (3000.0, 1920, 1080),
    (4300.0, 1920, 1080),
];

impl VideoManifest {
    /// Six-layer ladder from 235 to 4300 kbps.
    pub fn default_ladder(segment_count: u32, segment_duration_s: f64, framerate_fps: f64) -> Self {
        Self {
            segment_count,
            segment_duration_s,
            representations: LADDER
                .iter()
                .enumerate()
                .map(|(i, &(bitrate_kbps, width_px, height_px))| Representation {
                    quality_layer: i as u32,
                    bitrate_kbps,
                    width_px,
                    height_px,
                })
                .collect(),
            framerate_fps,
        }
    }

    pub fn single(segment_count: u32, segment_duration_s: f64, bitrate_kbps: f64) -> Self {
        Self {
            segment_count,
            segment_duration_s,
            representations: vec![Representation {
                quality_layer: 0,
                bitrate_kbps,
                width_px: 1280,
                height_px: 720,
            }],
            framerate_fps: 30.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |why: &str| Err(SynthError::InvalidManifest(why.to_string()));
        if self.segment_count == 0 {
            return bad("segment_count must be positive");
        }
        if !(self.segment_duration_s > 0.0 && self.segment_duration_s.is_finite()) {
            return bad("segment_duration_s must be positive");
        }
        if !(self.framerate_fps > 0.0) {
            return bad("framerate_fps must be positive");
        }
        if self.representations.is_empty() {
            return bad("no representations");
        }
        for (i, r) in self.representations.iter().enumerate() {
            if r.quality_layer != i as u32 {
                return bad("quality layers must be 0, 1, 2, ... in order");
            }
            if !(r.bitrate_kbps > 0.0) || r.width_px == 0 || r.height_px == 0 {
                return bad("representation bitrate and resolution must be positive");
            }
        }
        if self
            .representations
            .windows(2)
            .any(|w| w[1].bitrate_kbps <= w[0].bitrate_kbps)
        {
            return bad("bitrates must increase strictly with layer");
        }
        Ok(())
    }

    pub fn top(&self) -> &Representation {
        self.representations.last().expect("validated manifest")
    }

    /// Highest layer whose bitrate does not exceed `kbps`; layer 0 otherwise.
    pub fn highest_within(&self, kbps: f64) -> usize {
        self.representations
            .iter()
            .rposition(|r| r.bitrate_kbps <= kbps)
            .unwrap_or(0)
    }
}
