use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::allocator::{allocate_resources, equal_split, AllocationPolicy, AllocatorConfig, SessionShare, SessionState};
use super::kqi::KqiMessage;
use super::monitor::{aggregate_window, FeatureMonitor, PredictionRecord};
use super::{FlowOption, MonitoringConfig, PipelineError};
use crate::features::{extract_features, FeatureVector, Scaler, SessionSummary, VqiConfig};
use crate::models::{stream_rng, TrainedModel};
use crate::session::{validate_session, StreamingSession};
use crate::synth::{
    oracle_qoe, trace_library, AbrPolicy, BandwidthTrace, OracleWeights, Player, PlayerConfig, SynthError,
    VideoManifest,
};

const SEED_STREAM: u64 = 51;

fn default_fps() -> f64 {
    30.0
}

fn default_width() -> u32 {
    1920
}

fn default_height() -> u32 {
    1080
}

fn default_segment_duration() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSession {
    pub session_id: String,
    pub trace_id: String,
    pub policy_id: String,
    pub segment_count: u32,
    #[serde(default = "default_fps")]
    pub framerate_fps: f64,
    #[serde(default = "default_width")]
    pub device_width_px: u32,
    #[serde(default = "default_height")]
    pub device_height_px: u32,
}

/// Sessions sharing one bottleneck link. Trace and policy ids resolve against
/// `traces` and `policies` first, then the built-in library and default set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario_id: String,
    pub capacity_kbps: f64,
    #[serde(default = "default_segment_duration")]
    pub segment_duration_s: f64,
    #[serde(default)]
    pub player: PlayerConfig,
    #[serde(default)]
    pub traces: Vec<BandwidthTrace>,
    #[serde(default)]
    pub policies: Vec<AbrPolicy>,
    pub sessions: Vec<ScenarioSession>,
}

struct Resolved {
    manifest: VideoManifest,
    trace: BandwidthTrace,
    policy: AbrPolicy,
    player: PlayerConfig,
}

const DEVICES: [(u32, u32); 3] = [(1280, 720), (1920, 1080), (2560, 1440)];
const FRAMERATES: [f64; 3] = [24.0, 30.0, 60.0];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::InvalidScenario(e.to_string()))
    }

    /// Six sessions on a 12 Mbps link with a mix of traces, clients and screens.
    pub fn s1() -> Self {
        let rows = [
            ("s1-a", "constant_high", "rate_based", 2560, 1440, 30.0),
            ("s1-b", "volatile", "buffer_based", 1280, 720, 24.0),
            ("s1-c", "mobile_walk", "hybrid", 1920, 1080, 30.0),
            ("s1-d", "step_up", "conservative_rate", 1920, 1080, 60.0),
            ("s1-e", "congested_evening", "aggressive_rate", 1280, 720, 30.0),
            ("s1-f", "periodic_dip", "rate_based", 2560, 1440, 60.0),
        ];
        Self {
            scenario_id: "S1".into(),
            capacity_kbps: 12_000.0,
            segment_duration_s: 2.0,
            player: PlayerConfig::default(),
            traces: Vec::new(),
            policies: Vec::new(),
            sessions: rows
                .iter()
                .map(|&(id, trace, policy, w, h, fps)| ScenarioSession {
                    session_id: id.into(),
                    trace_id: trace.into(),
                    policy_id: policy.into(),
                    segment_count: 30,
                    framerate_fps: fps,
                    device_width_px: w,
                    device_height_px: h,
                })
                .collect(),
        }
    }

    /// `n` sessions cycling through the trace library and the default policies,
    /// with 1.5 Mbps of capacity per session.
    pub fn mixed(scenario_id: &str, n: usize) -> Self {
        let traces = trace_library();
        let policies = AbrPolicy::default_set();
        Self {
            scenario_id: scenario_id.into(),
            capacity_kbps: 1500.0 * n as f64,
            segment_duration_s: 2.0,
            player: PlayerConfig::default(),
            traces: Vec::new(),
            policies: Vec::new(),
            sessions: (0..n)
                .map(|i| ScenarioSession {
                    session_id: format!("m{i:03}"),
                    trace_id: traces[i % traces.len()].trace_id.clone(),
                    policy_id: policies[i % policies.len()].policy_id.clone(),
                    segment_count: 10 + (7 * i as u32) % 21,
                    framerate_fps: FRAMERATES[i % 3],
                    device_width_px: DEVICES[(i / 3) % 3].0,
                    device_height_px: DEVICES[(i / 3) % 3].1,
                })
                .collect(),
        }
    }

    fn resolve(&self) -> Result<Vec<Resolved>, PipelineError> {
        let bad = |why: String| Err(PipelineError::InvalidScenario(why));
        if !(self.capacity_kbps > 0.0 && self.capacity_kbps.is_finite()) {
            return Err(PipelineError::Capacity(self.capacity_kbps));
        }
        if self.sessions.is_empty() {
            return bad("no sessions".into());
        }
        let mut seen = BTreeSet::new();
        for s in &self.sessions {
            if !seen.insert(&s.session_id) {
                return bad(format!("duplicate session id `{}`", s.session_id));
            }
        }
        let library = trace_library();
        let defaults = AbrPolicy::default_set();
        let mut out = Vec::with_capacity(self.sessions.len());
        for s in &self.sessions {
            let Some(trace) = self.traces.iter().chain(&library).find(|t| t.trace_id == s.trace_id) else {
                return bad(format!("session `{}`: unknown trace `{}`", s.session_id, s.trace_id));
            };
            let Some(policy) = self.policies.iter().chain(&defaults).find(|p| p.policy_id == s.policy_id) else {
                return bad(format!("session `{}`: unknown policy `{}`", s.session_id, s.policy_id));
            };
            trace.validate()?;
            let manifest = VideoManifest::default_ladder(s.segment_count, self.segment_duration_s, s.framerate_fps);
            manifest.validate()?;
            out.push(Resolved {
                manifest,
                trace: trace.clone(),
                policy: policy.clone(),
                player: PlayerConfig {
                    device_width_px: s.device_width_px,
                    device_height_px: s.device_height_px,
                    ..self.player.clone()
                },
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub monitoring: MonitoringConfig,
    pub policy: AllocationPolicy,
    /// Number of reallocation epochs; 0 keeps the initial equal split throughout.
    pub epochs: u32,
    /// Defaults to the monitoring period.
    pub epoch_period_s: Option<f64>,
    pub allocator: AllocatorConfig,
    pub vqi: VqiConfig,
    pub weights: OracleWeights,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            monitoring: MonitoringConfig::default(),
            policy: AllocationPolicy::Qoe,
            epochs: 16,
            epoch_period_s: None,
            allocator: AllocatorConfig::default(),
            vqi: VqiConfig::default(),
            weights: OracleWeights::default(),
            seed: 0,
        }
    }
}

impl LoopConfig {
    fn period(&self) -> Result<f64, PipelineError> {
        self.monitoring.validate()?;
        self.allocator.validate()?;
        let p = self.epoch_period_s.unwrap_or(1.0 / self.monitoring.frequency_hz);
        if !(p > 0.0 && p.is_finite()) {
            return Err(PipelineError::InvalidConfig(format!("epoch period must be positive, got {p}")));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub time_s: f64,
    pub shares: Vec<SessionShare>,
    pub objective: f64,
    /// Mean of the latest delivered prediction over sessions that have one.
    pub mean_latest_predicted_qoe: Option<f64>,
    /// Stall seconds accumulated by all sessions up to this epoch.
    pub total_stall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionResult {
    pub session_id: String,
    pub trace_id: String,
    pub policy_id: String,
    pub sim_seed: u64,
    pub initial_share_kbps: f64,
    pub end_time_s: f64,
    pub stall_count: usize,
    pub total_stall_s: f64,
    /// Features from the monitor's end-of-session window.
    pub pipeline_features: FeatureVector,
    /// Features extracted offline from the completed session.
    pub offline_features: FeatureVector,
    pub predicted_qoe: f64,
    /// Noise-free oracle label of the completed session.
    pub oracle_qoe: f64,
    #[serde(skip)]
    pub session: StreamingSession,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario_id: String,
    pub policy: AllocationPolicy,
    pub flow_option: FlowOption,
    pub frequency_hz: f64,
    pub latency_s: f64,
    pub epochs_requested: u32,
    pub epoch_period_s: f64,
    pub capacity_kbps: f64,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub predictions: Vec<PredictionRecord>,
    pub sessions: Vec<SessionResult>,
    pub mean_final_predicted_qoe: f64,
    pub mean_oracle_qoe: f64,
    /// Every probe message in emission order.
    #[serde(skip)]
    pub messages: Vec<KqiMessage>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (epoch, session).
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,time_s,session_id,share_kbps,predicted_qoe,observed_emit_time_s\n");
        for e in &self.epochs {
            for s in &e.shares {
                let seen = s.observed_emit_time_s.map(|t| t.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    e.epoch, e.time_s, s.session_id, s.share_kbps, s.predicted_qoe, seen
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Delivery(usize),
    Tick(u64),
    Epoch(u32),
}

#[derive(Debug)]
struct Queued {
    t: f64,
    seq: u64,
    ev: Event,
}

impl Queued {
    fn class(&self) -> u8 {
        match self.ev {
            Event::Delivery(_) => 0,
            Event::Tick(_) => 1,
            Event::Epoch(_) => 2,
        }
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.class().cmp(&other.class()))
            .then(self.seq.cmp(&other.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Reverse<Queued>>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, t: f64, ev: Event) {
        self.heap.push(Reverse(Queued { t, seq: self.seq, ev }));
        self.seq += 1;
    }

    fn peek_time(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |q| q.0.t)
    }
}

/// Runs every scenario session to completion under the monitoring and
/// control loop. Player events come first at equal times, then deliveries,
/// probe ticks and allocation epochs, in that order.
pub fn run_closed_loop(
    scenario: &Scenario,
    model: &TrainedModel,
    scaler: &Scaler,
    cfg: &LoopConfig,
) -> Result<RunReport, PipelineError> {
    let resolved = scenario.resolve()?;
    let period = cfg.period()?;
    let freq = cfg.monitoring.frequency_hz;
    let latency = cfg.monitoring.latency_s();
    let limit = scenario.player.max_wall_time_s;
    let n = resolved.len();

    let mut rng = stream_rng(cfg.seed, SEED_STREAM);
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let initial = equal_split(scenario.capacity_kbps, n);
    let mut players = Vec::with_capacity(n);
    for (i, r) in resolved.iter().enumerate() {
        players.push(Player::with_cap(
            &scenario.sessions[i].session_id,
            &r.manifest,
            &r.trace,
            &r.policy,
            &r.player,
            seeds[i],
            Some(initial[i]),
        )?);
    }

    let mut monitor = FeatureMonitor::new(model, scaler);
    let mut messages: Vec<KqiMessage> = Vec::new();
    let mut epochs = Vec::new();
    let mut queue = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    queue.push(1.0 / freq, Event::Tick(1));
    if cfg.epochs > 0 {
        queue.push(period, Event::Epoch(1));
    }

    loop {
        let qt = queue.peek_time();
        let next_player = players
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_finished())
            .map(|(i, p)| (i, p.next_event_time()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((i, pt)) = next_player {
            if pt <= qt && pt.is_finite() {
                let p = &mut players[i];
                p.run_until(pt)?;
                if let Some(session) = p.session() {
                    validate_session(&session).map_err(|violations| SynthError::InvalidSession {
                        session_id: session.session_id.clone(),
                        violations,
                    })?;
                    messages.push(KqiMessage::end_of_session(&session, pt, &cfg.vqi));
                    queue.push(pt + latency, Event::Delivery(messages.len() - 1));
                }
                continue;
            }
        }
        let Some(Reverse(item)) = queue.heap.pop() else {
            if let Some(p) = players.iter_mut().find(|p| !p.is_finished()) {
                // Nothing left that could unblock it.
                p.run_until(f64::INFINITY)?;
            }
            break;
        };
        let t = item.t;
        let any_active = players.iter().any(|p| !p.is_finished());
        match item.ev {
            Event::Delivery(m) => {
                monitor.deliver(messages[m].clone(), t)?;
            }
            Event::Tick(k) => {
                for p in players.iter().filter(|p| !p.is_finished()) {
                    let msg = KqiMessage::from_snapshot(
                        p.session_id(),
                        &p.snapshot(t),
                        p.manifest().framerate_fps,
                        p.device_pixels(),
                        &cfg.vqi,
                    );
                    messages.push(msg);
                    queue.push(t + latency, Event::Delivery(messages.len() - 1));
                }
                let next = (k + 1) as f64 / freq;
                if any_active && next <= limit {
                    queue.push(next, Event::Tick(k + 1));
                }
            }
            Event::Epoch(k) => {
                let states: Vec<SessionState> = players
                    .iter()
                    .filter(|p| !p.is_finished())
                    .map(|p| session_state(p, t, &monitor, &cfg.vqi))
                    .collect();
                let d = allocate_resources(
                    t,
                    &states,
                    scenario.capacity_kbps,
                    cfg.policy,
                    &cfg.allocator,
                    &cfg.vqi,
                    &|f| monitor.predict(f),
                )?;
                for s in &d.shares {
                    let p = players
                        .iter_mut()
                        .find(|p| p.session_id() == s.session_id)
                        .expect("share for a known session");
                    p.set_cap(t, Some(s.share_kbps))?;
                }
                let latest: Vec<f64> = players
                    .iter()
                    .filter_map(|p| monitor.latest(p.session_id()).map(|l| l.predicted_qoe))
                    .collect();
                let total_stall_s = players
                    .iter()
                    .flat_map(|p| p.snapshot(t).stalls)
                    .map(|s| s.duration_s)
                    .fold(0.0, |a, b| a + b);
                epochs.push(EpochRecord {
                    epoch: k,
                    time_s: t,
                    mean_latest_predicted_qoe: (!latest.is_empty())
                        .then(|| latest.iter().sum::<f64>() / latest.len() as f64),
                    total_stall_s,
                    objective: d.objective,
                    shares: d.shares,
                });
                let next = f64::from(k + 1) * period;
                if k < cfg.epochs && any_active && next <= limit {
                    queue.push(next, Event::Epoch(k + 1));
                }
            }
        }
    }

    let mut sessions = Vec::with_capacity(n);
    for (i, p) in players.iter().enumerate() {
        let session = p.session().expect("loop ends with every session finished");
        let id = &session.session_id;
        let window = monitor.window(id);
        sessions.push(SessionResult {
            session_id: id.clone(),
            trace_id: resolved[i].trace.trace_id.clone(),
            policy_id: resolved[i].policy.policy_id.clone(),
            sim_seed: seeds[i],
            initial_share_kbps: initial[i],
            end_time_s: p.end_time().expect("finished"),
            stall_count: session.stalls.len(),
            total_stall_s: session.total_stall_s(),
            pipeline_features: aggregate_window(window)?,
            offline_features: extract_features(&session, &cfg.vqi),
            predicted_qoe: monitor.latest(id).expect("end-of-session delivered").predicted_qoe,
            oracle_qoe: oracle_qoe(&session, &cfg.weights, &cfg.vqi, 0.0, 0)?,
            session,
        });
    }
    let mean = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0, |a, b| a + b) / n as f64;
    Ok(RunReport {
        scenario_id: scenario.scenario_id.clone(),
        policy: cfg.policy,
        flow_option: cfg.monitoring.flow_option,
        frequency_hz: freq,
        latency_s: latency,
        epochs_requested: cfg.epochs,
        epoch_period_s: period,
        capacity_kbps: scenario.capacity_kbps,
        seed: cfg.seed,
        epochs,
        predictions: monitor.into_log(),
        mean_final_predicted_qoe: mean(&mut sessions.iter().map(|s| s.predicted_qoe)),
        mean_oracle_qoe: mean(&mut sessions.iter().map(|s| s.oracle_qoe)),
        sessions,
        messages,
    })
}

fn session_state(p: &Player, t: f64, monitor: &FeatureMonitor, vqi: &VqiConfig) -> SessionState {
    let (features, elapsed_media_s, observed_emit_time_s) = match monitor.latest(p.session_id()) {
        Some(l) => (l.features, l.elapsed_media_s, Some(l.emit_time_s)),
        None => (
            SessionSummary::of_prefix(0.0, &[], &[], 0.0, p.manifest().framerate_fps, p.device_pixels(), vqi)
                .features(),
            0.0,
            None,
        ),
    };
    SessionState {
        session_id: p.session_id().to_string(),
        features,
        elapsed_media_s,
        ladder: p.manifest().representations.clone(),
        device_pixels: p.device_pixels(),
        path_kbps: Some(p.path_kbps(t)),
        observed_emit_time_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{feature_matrix, fit_scaler};
    use crate::models::{fit_model, ModelKind, ModelSpec};
    use crate::pipeline::{probe_emit, replay};
    use crate::synth::{generate_dataset, simulate_outcome, SynthConfig};

    fn synthetic_model() -> (TrainedModel, Scaler) {
        let cfg = SynthConfig {
            per_cell: 1,
            ..Default::default()
        };
        let data = generate_dataset(&trace_library(), &AbrPolicy::default_set(), &cfg, &VqiConfig::default(), 5)
            .unwrap();
        let fv: Vec<FeatureVector> = data
            .iter()
            .map(|s| extract_features(&s.session, &VqiConfig::default()))
            .collect();
        let y: Vec<f64> = data.iter().map(|s| s.mos_normalized.unwrap()).collect();
        let x = feature_matrix(&fv);
        let scaler = fit_scaler(&x).unwrap();
        let spec = ModelSpec::default_for(ModelKind::Gb);
        let model = fit_model(&spec, &scaler.transform(&x).unwrap(), &y).unwrap();
        (model, scaler)
    }

    #[test]
    fn zero_epochs_is_plain_simulation_under_equal_shares() {
        let (model, scaler) = synthetic_model();
        let scenario = Scenario::mixed("static", 8);
        let cfg = LoopConfig {
            epochs: 0,
            ..Default::default()
        };
        let report = run_closed_loop(&scenario, &model, &scaler, &cfg).unwrap();
        assert!(report.epochs.is_empty());
        let resolved = scenario.resolve().unwrap();
        for (r, res) in resolved.iter().zip(&report.sessions) {
            let alone = simulate_outcome(
                &res.session_id,
                &r.manifest,
                &r.trace.capped(res.initial_share_kbps),
                &r.policy,
                &r.player,
                res.sim_seed,
            )
            .unwrap();
            assert_eq!(alone.end_time_s, res.end_time_s);
            let mut expect = alone.session;
            expect.trace_id = res.session.trace_id.clone();
            assert_eq!(expect, res.session);
        }
    }

    #[test]
    fn live_probe_agrees_with_offline_replay_of_the_record() {
        let (model, scaler) = synthetic_model();
        let cfg = LoopConfig {
            epochs: 0,
            monitoring: MonitoringConfig {
                frequency_hz: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = run_closed_loop(&Scenario::mixed("probe", 6), &model, &scaler, &cfg).unwrap();
        for res in &report.sessions {
            let live: Vec<&KqiMessage> = report.messages.iter().filter(|m| m.session_id == res.session_id).collect();
            let offline = probe_emit(&res.session, &cfg.monitoring, &cfg.vqi).unwrap();
            assert_eq!(live.len(), offline.len(), "{}", res.session_id);
            for (a, b) in live.iter().zip(&offline) {
                // The end time is the player clock live and a sum of durations offline.
                assert!((a.emit_time_s - b.emit_time_s).abs() <= 1e-9 * b.emit_time_s);
                assert_eq!((a.stalls, a.segments_played, a.eos), (b.stalls, b.segments_played, b.eos));
                let (fa, fb) = (a.summary().features().to_array(), b.summary().features().to_array());
                for j in 0..fa.len() {
                    assert!((fa[j] - fb[j]).abs() <= 1e-9 * fb[j].abs().max(1.0), "{} f{}", res.session_id, j + 1);
                }
            }
        }
    }

    #[test]
    fn end_of_session_features_match_offline_for_twenty_sessions() {
        let (model, scaler) = synthetic_model();
        let report = run_closed_loop(&Scenario::mixed("twenty", 20), &model, &scaler, &LoopConfig::default()).unwrap();
        assert_eq!(report.sessions.len(), 20);
        for s in &report.sessions {
            let (a, b) = (s.pipeline_features.to_array(), s.offline_features.to_array());
            for j in 0..a.len() {
                assert!((a[j] - b[j]).abs() <= 1e-9, "{} f{}", s.session_id, j + 1);
            }
        }
    }

    #[test]
    fn reports_are_reproducible_and_replayable() {
        let (model, scaler) = synthetic_model();
        let scenario = Scenario::s1();
        for flow in [FlowOption::Ifo1, FlowOption::Ifo2] {
            let cfg = LoopConfig {
                monitoring: MonitoringConfig {
                    flow_option: flow,
                    ..Default::default()
                },
                seed: 9,
                ..Default::default()
            };
            let a = run_closed_loop(&scenario, &model, &scaler, &cfg).unwrap();
            let b = run_closed_loop(&scenario, &model, &scaler, &cfg).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            assert_eq!(a.epochs_csv(), b.epochs_csv());
            let again = replay(&a.messages, a.latency_s, &model, &scaler).unwrap();
            assert_eq!(again, a.predictions);
            assert_eq!(a.predictions.len(), a.messages.len());
        }
    }

    #[test]
    fn nothing_is_read_before_delivery_and_capacity_holds() {
        let (model, scaler) = synthetic_model();
        let scenario = Scenario::mixed("causal", 10);
        let cfg = LoopConfig {
            epochs: 40,
            monitoring: MonitoringConfig {
                frequency_hz: 0.5,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = run_closed_loop(&scenario, &model, &scaler, &cfg).unwrap();
        assert!(!report.epochs.is_empty());
        for p in &report.predictions {
            assert_eq!(p.delivered_s, p.emit_time_s + report.latency_s);
        }
        for w in report.predictions.windows(2) {
            assert!(w[1].delivered_s >= w[0].delivered_s);
        }
        for e in &report.epochs {
            let total = e.shares.iter().map(|s| s.share_kbps).fold(0.0, |a, b| a + b);
            assert!(total <= scenario.capacity_kbps, "epoch {}: {total}", e.epoch);
            assert!(e.shares.iter().all(|s| s.share_kbps >= 0.0));
            for s in &e.shares {
                if let Some(seen) = s.observed_emit_time_s {
                    assert!(seen + report.latency_s <= e.time_s);
                }
            }
        }
    }

    #[test]
    fn scenario_errors() {
        let (model, scaler) = synthetic_model();
        let mut s = Scenario::mixed("bad", 2);
        s.sessions[1].session_id = s.sessions[0].session_id.clone();
        assert!(matches!(
            run_closed_loop(&s, &model, &scaler, &LoopConfig::default()),
            Err(PipelineError::InvalidScenario(_))
        ));
        let mut s = Scenario::mixed("bad", 2);
        s.sessions[0].trace_id = "nowhere".into();
        assert!(matches!(
            run_closed_loop(&s, &model, &scaler, &LoopConfig::default()),
            Err(PipelineError::InvalidScenario(_))
        ));
        let json = serde_json::to_string(&Scenario::s1()).unwrap();
        assert_eq!(Scenario::from_json(&json).unwrap(), Scenario::s1());
        assert!(Scenario::from_json("{\"scenario_id\": 1}").is_err());
    }
}
