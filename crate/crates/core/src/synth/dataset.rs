use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::abr::AbrPolicy;
use super::manifest::VideoManifest;
use super::oracle::{oracle_qoe, OracleWeights};
use super::player::{simulate_outcome, PlayerConfig};
use super::trace::BandwidthTrace;
use super::SynthError;
use crate::features::VqiConfig;
use crate::models::stream_rng;
use crate::session::LabeledSession;

/// Generator settings; each session draws its own segment count, bandwidth
/// scale, device and frame rate from these ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub per_cell: u32,
    pub noise_sigma: f64,
    pub weights: OracleWeights,
    pub player: PlayerConfig,
    pub segment_duration_s: f64,
    pub segment_count_min: u32,
    pub segment_count_max: u32,
    pub bandwidth_scale_min: f64,
    pub bandwidth_scale_max: f64,
    pub framerates: Vec<f64>,
    pub devices: Vec<(u32, u32)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_cell: 6,
            noise_sigma: 0.05,
            weights: OracleWeights::default(),
            player: PlayerConfig::default(),
            segment_duration_s: 2.0,
            segment_count_min: 9,
            segment_count_max: 30,
            bandwidth_scale_min: 0.6,
            bandwidth_scale_max: 1.4,
            framerates: vec![24.0, 30.0, 60.0],
            devices: vec![(1280, 720), (1920, 1080), (2560, 1440)],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |why: &str| Err(SynthError::InvalidConfig(why.to_string()));
        if self.per_cell == 0 {
            return bad("per_cell must be at least 1");
        }
        if self.segment_count_min == 0 || self.segment_count_min > self.segment_count_max {
            return bad("segment count range must be non-empty and start above 0");
        }
        if !(self.bandwidth_scale_min > 0.0 && self.bandwidth_scale_min <= self.bandwidth_scale_max) {
            return bad("bandwidth scale range must be positive and non-empty");
        }
        if self.framerates.is_empty() || self.framerates.iter().any(|&f| !(f > 0.0)) {
            return bad("framerates must be a non-empty list of positive values");
        }
        if self.devices.is_empty() || self.devices.iter().any(|&(w, h)| w == 0 || h == 0) {
            return bad("devices must be a non-empty list of positive resolutions");
        }
        self.weights.validate()
    }
}

const CELL_STREAM: u64 = 40_000;

fn one_session(
    trace: &BandwidthTrace,
    policy: &AbrPolicy,
    replicate: u32,
    flat_index: u64,
    cfg: &SynthConfig,
    vqi: &VqiConfig,
    seed: u64,
) -> Result<LabeledSession, SynthError> {
    let mut rng = stream_rng(seed, CELL_STREAM + flat_index);
    let segments = rng.random_range(cfg.segment_count_min..=cfg.segment_count_max);
    let scale = rng.random_range(cfg.bandwidth_scale_min..=cfg.bandwidth_scale_max);
    let &(w, h) = cfg.devices.choose(&mut rng).expect("validated");
    let &fps = cfg.framerates.choose(&mut rng).expect("validated");
    let sim_seed: u64 = rng.random();
    let label_seed: u64 = rng.random();

    let manifest = VideoManifest::default_ladder(segments, cfg.segment_duration_s, fps);
    let player = PlayerConfig {
        device_width_px: w,
        device_height_px: h,
        ..cfg.player.clone()
    };
    let id = format!("{}-{}-{replicate:02}", policy.policy_id, trace.trace_id);
    let mut session =
        simulate_outcome(&id, &manifest, &trace.scaled(scale), policy, &player, sim_seed)?.session;
    session.trace_id = Some(trace.trace_id.clone());
    let mos = oracle_qoe(&session, &cfg.weights, vqi, cfg.noise_sigma, label_seed)?;
    Ok(LabeledSession {
        session,
        mos_normalized: Some(mos),
    })
}

/// Simulates `per_cell` sessions for every (policy, trace) pair and labels
/// them with the oracle. Output is ordered by policy, then trace, then replicate.
pub fn generate_dataset(
    traces: &[BandwidthTrace],
    policies: &[AbrPolicy],
    cfg: &SynthConfig,
    vqi: &VqiConfig,
    seed: u64,
) -> Result<Vec<LabeledSession>, SynthError> {
    cfg.validate()?;
    if traces.is_empty() || policies.is_empty() {
        return Err(SynthError::InvalidConfig("need at least one trace and one policy".into()));
    }
    for t in traces {
        t.validate()?;
    }
    let per = cfg.per_cell as usize;
    let total = policies.len() * traces.len() * per;
    let results: Vec<Result<LabeledSession, SynthError>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let p = i / (traces.len() * per);
            let t = (i / per) % traces.len();
            let r = (i % per) as u32;
            one_session(&traces[t], &policies[p], r, i as u64, cfg, vqi, seed).map_err(|e| {
                SynthError::Cell {
                    policy: policies[p].policy_id.clone(),
                    trace: traces[t].trace_id.clone(),
                    replicate: r,
                    reason: e.to_string(),
                }
            })
        })
        .collect();
    let mut ok = Vec::with_capacity(total);
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => failed.push(e.to_string()),
        }
    }
    if failed.is_empty() {
        Ok(ok)
    } else {
        Err(SynthError::Cells(failed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{parse_session_log, serialize_session_log};
    use crate::synth::trace::trace_library;

    #[test]
    fn six_cells_per_pair_gives_468() {
        let cfg = SynthConfig::default();
        let d = generate_dataset(&trace_library(), &AbrPolicy::default_set(), &cfg, &VqiConfig::default(), 42)
            .unwrap();
        assert_eq!(d.len(), 468);
        assert_eq!(d[0].session.session_id, "rate_based-constant_low-00");
        assert_eq!(d[467].session.session_id, "oracle_capped-congested_evening-05");
        let log = serialize_session_log(&d);
        let back = parse_session_log(log.as_bytes()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn same_seed_same_file() {
        let cfg = SynthConfig {
            per_cell: 1,
            ..Default::default()
        };
        let run = |seed| {
            serialize_session_log(
                &generate_dataset(&trace_library(), &AbrPolicy::default_set(), &cfg, &VqiConfig::default(), seed)
                    .unwrap(),
            )
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn constant_high_traces_never_stall() {
        let cfg = SynthConfig {
            per_cell: 1,
            ..Default::default()
        };
        let high: Vec<BandwidthTrace> = (0..13)
            .map(|i| BandwidthTrace::constant(&format!("high{i}"), 20_000.0))
            .collect();
        let d = generate_dataset(&high, &AbrPolicy::default_set(), &cfg, &VqiConfig::default(), 3).unwrap();
        assert_eq!(d.len(), 78);
        assert!(d.iter().all(|s| s.session.stalls.is_empty()));
    }

    #[test]
    fn failing_cells_are_reported() {
        let dead = BandwidthTrace::constant("dead", 0.0);
        let cfg = SynthConfig {
            per_cell: 2,
            ..Default::default()
        };
        match generate_dataset(&[dead], &AbrPolicy::default_set()[..1], &cfg, &VqiConfig::default(), 0) {
            Err(SynthError::Cells(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn labels_spread_out() {
        let d = generate_dataset(
            &trace_library(),
            &AbrPolicy::default_set(),
            &SynthConfig {
                per_cell: 2,
                ..Default::default()
            },
            &VqiConfig::default(),
            42,
        )
        .unwrap();
        let y: Vec<f64> = d.iter().map(|s| s.mos_normalized.unwrap()).collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!(sd > 0.1, "label sd {sd}");
    }
}
