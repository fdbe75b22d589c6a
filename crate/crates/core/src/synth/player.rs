//! Fluid buffer model of a DASH client.
//!
//! One download runs at a time at the effective bandwidth
//! `min(trace(t), cap)`. A segment enters the buffer whole when its last bit
//! arrives; playback drains the buffer at one media second per wall second.
//! Playback starts once the buffer holds `startup_segments` segments (or
//! everything has arrived) and a stall lasts until it holds
//! `resume_segments`. When a download completes at the very instant the
//! buffer runs dry, the completion is handled first and no stall occurs.
//!
//! The state only changes at events (download completion, buffer empty,
//! buffer room, trace change), so running a session with interruptions that
//! leave the bandwidth unchanged produces bit-identical results.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::abr::{AbrContext, AbrPolicy};
use super::manifest::VideoManifest;
use super::trace::BandwidthTrace;
use super::SynthError;
use crate::models::stream_rng;
use crate::session::{validate_session, Segment, StallEvent, StreamingSession};

const VBR_STREAM: u64 = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlayerConfig {
    pub startup_segments: u32,
    pub resume_segments: u32,
    pub max_buffer_s: f64,
    pub max_wall_time_s: f64,
    pub device_width_px: u32,
    pub device_height_px: u32,
    /// Segment sizes vary uniformly within `±vbr_spread` of the nominal bitrate.
    pub vbr_spread: f64,
}

impl Default for PlayerConfig {
    fn default() -> Self {
        Self {
            startup_segments: 2,
            resume_segments: 1,
            max_buffer_s: 30.0,
            max_wall_time_s: 3600.0,
            device_width_px: 1920,
            device_height_px: 1080,
            vbr_spread: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Startup,
    Playing,
    Stalled { since: f64, media_at: f64 },
    Finished,
}

#[derive(Debug, Clone, Copy)]
struct Download {
    index: usize,
    layer: usize,
    bits: f64,
    left_bits: f64,
    started_s: f64,
}

/// Observable playback state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackSnapshot {
    pub time_s: f64,
    pub started: bool,
    pub finished: bool,
    /// Startup delay, or the time spent loading so far before playback starts.
    pub initial_loading_s: f64,
    pub media_position_s: f64,
    /// Completed stalls plus the ongoing one, truncated at `time_s`.
    pub stalls: Vec<StallEvent>,
    /// Segments whose playback has begun.
    pub played: Vec<Segment>,
    pub current_layer: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct Player {
    session_id: String,
    manifest: VideoManifest,
    trace: BandwidthTrace,
    policy: AbrPolicy,
    cfg: PlayerConfig,
    vbr: Vec<f64>,
    cap_kbps: Option<f64>,
    now: f64,
    phase: Phase,
    buffer_s: f64,
    media_pos_s: f64,
    next_segment: usize,
    download: Option<Download>,
    throughput: Vec<f64>,
    segments: Vec<Segment>,
    stalls: Vec<StallEvent>,
    initial_loading_s: Option<f64>,
    downloaded_kbits: f64,
}

fn check_config(m: &VideoManifest, cfg: &PlayerConfig) -> Result<(), SynthError> {
    let d = m.segment_duration_s;
    let bad = |why: String| Err(SynthError::InvalidConfig(why));
    if !(cfg.max_buffer_s >= d) {
        return bad(format!("max_buffer_s {} is below one segment ({d} s)", cfg.max_buffer_s));
    }
    if f64::from(cfg.startup_segments.max(cfg.resume_segments)) * d > cfg.max_buffer_s {
        return bad("startup/resume thresholds exceed max_buffer_s".into());
    }
    if !(0.0..1.0).contains(&cfg.vbr_spread) {
        return bad(format!("vbr_spread {} must lie in [0, 1)", cfg.vbr_spread));
    }
    if !(cfg.max_wall_time_s > 0.0) {
        return bad("max_wall_time_s must be positive".into());
    }
    if cfg.device_width_px == 0 || cfg.device_height_px == 0 {
        return bad("device resolution must be positive".into());
    }
    Ok(())
}

impl Player {
    pub fn new(
        session_id: &str,
        manifest: &VideoManifest,
        trace: &BandwidthTrace,
        policy: &AbrPolicy,
        cfg: &PlayerConfig,
        seed: u64,
    ) -> Result<Self, SynthError> {
        Self::with_cap(session_id, manifest, trace, policy, cfg, seed, None)
    }

    /// Like [`Player::new`], with a bandwidth cap in force from time 0.
    pub fn with_cap(
        session_id: &str,
        manifest: &VideoManifest,
        trace: &BandwidthTrace,
        policy: &AbrPolicy,
        cfg: &PlayerConfig,
        seed: u64,
        cap_kbps: Option<f64>,
    ) -> Result<Self, SynthError> {
        manifest.validate()?;
        trace.validate()?;
        check_config(manifest, cfg)?;
        let mut rng = stream_rng(seed, VBR_STREAM);
        let vbr = (0..manifest.segment_count)
            .map(|_| 1.0 + cfg.vbr_spread * rng.random_range(-1.0..=1.0))
            .collect();
        let mut p = Self {
            session_id: session_id.to_string(),
            manifest: manifest.clone(),
            trace: trace.clone(),
            policy: policy.clone(),
            cfg: cfg.clone(),
            vbr,
            cap_kbps,
            now: 0.0,
            phase: Phase::Startup,
            buffer_s: 0.0,
            media_pos_s: 0.0,
            next_segment: 0,
            download: None,
            throughput: Vec::new(),
            segments: Vec::new(),
            stalls: Vec::new(),
            initial_loading_s: None,
            downloaded_kbits: 0.0,
        };
        p.maybe_request(false);
        Ok(p)
    }

    pub fn manifest(&self) -> &VideoManifest {
        &self.manifest
    }

    pub fn device_pixels(&self) -> f64 {
        f64::from(self.cfg.device_width_px) * f64::from(self.cfg.device_height_px)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    /// Media seconds buffered ahead of the playhead.
    pub fn buffer_s(&self) -> f64 {
        self.buffer_s
    }

    pub fn downloaded_kbits(&self) -> f64 {
        self.downloaded_kbits
    }

    pub fn cap_kbps(&self) -> Option<f64> {
        self.cap_kbps
    }

    /// Uncapped path bandwidth at `t`.
    pub fn path_kbps(&self, t: f64) -> f64 {
        self.trace.rate_at(t)
    }

    pub fn bandwidth_kbps(&self) -> f64 {
        let b = self.trace.rate_at(self.now);
        self.cap_kbps.map_or(b, |c| b.min(c))
    }

    fn seg_d(&self) -> f64 {
        self.manifest.segment_duration_s
    }

    fn all_downloaded(&self) -> bool {
        self.download.is_none() && self.next_segment == self.manifest.segment_count as usize
    }

    fn has_room(&self) -> bool {
        self.buffer_s + self.seg_d() <= self.cfg.max_buffer_s
    }

    fn maybe_request(&mut self, force: bool) {
        if self.download.is_some()
            || self.phase == Phase::Finished
            || self.next_segment >= self.manifest.segment_count as usize
            || !(force || self.has_room())
        {
            return;
        }
        let last_layer = self.segments.last().map(|s| s.quality_layer as usize);
        let ctx = AbrContext {
            throughput_kbps: &self.throughput,
            buffer_s: self.buffer_s,
            last_layer,
            current_bandwidth_kbps: self.bandwidth_kbps(),
        };
        let layer = self
            .policy
            .choose(&self.manifest, &ctx)
            .min(self.manifest.representations.len() - 1);
        let index = self.next_segment;
        let kbps = self.manifest.representations[layer].bitrate_kbps * self.vbr[index];
        let bits = kbps * 1000.0 * self.seg_d();
        self.download = Some(Download {
            index,
            layer,
            bits,
            left_bits: bits,
            started_s: self.now,
        });
        self.next_segment += 1;
    }

    /// Times of the next completion, buffer-empty and buffer-room events.
    fn candidates(&self) -> (f64, f64, f64, f64) {
        let inf = f64::INFINITY;
        let (complete, change) = match &self.download {
            Some(d) => {
                let bw = self.bandwidth_kbps();
                let c = if bw > 0.0 {
                    self.now + d.left_bits / (bw * 1000.0)
                } else {
                    inf
                };
                (c, self.trace.next_change_after(self.now).unwrap_or(inf))
            }
            None => (inf, inf),
        };
        let playing = self.phase == Phase::Playing;
        let empty = if playing { self.now + self.buffer_s } else { inf };
        let room = if playing
            && self.download.is_none()
            && self.next_segment < self.manifest.segment_count as usize
            && !self.has_room()
        {
            self.now + (self.buffer_s - (self.cfg.max_buffer_s - self.seg_d()))
        } else {
            inf
        };
        (complete, empty, room, change)
    }

    /// Time of the next internal event, infinite when none is pending.
    pub fn next_event_time(&self) -> f64 {
        if self.is_finished() {
            return f64::INFINITY;
        }
        let (a, b, c, d) = self.candidates();
        a.min(b).min(c).min(d)
    }

    /// Moves the clock to `t`, assuming no event lies in between.
    fn advance(&mut self, t: f64) {
        let dt = t - self.now;
        if dt <= 0.0 {
            return;
        }
        if let Some(d) = &mut self.download {
            let bw = self.trace.rate_at(self.now);
            let bw = self.cap_kbps.map_or(bw, |c| bw.min(c));
            d.left_bits -= bw * 1000.0 * dt;
        }
        if self.phase == Phase::Playing {
            self.buffer_s -= dt;
            self.media_pos_s += dt;
        }
        self.now = t;
    }

    fn step(&mut self) -> Result<(), SynthError> {
        let (complete, empty, room, change) = self.candidates();
        let next = complete.min(empty).min(room).min(change);
        if !next.is_finite() || next > self.cfg.max_wall_time_s {
            return Err(SynthError::MaxWallTime {
                session_id: self.session_id.clone(),
                limit_s: self.cfg.max_wall_time_s,
            });
        }
        self.advance(next);
        if empty == next {
            self.buffer_s = 0.0;
        }
        if complete == next {
            let d = self.download.take().expect("completion implies a download");
            let rep = &self.manifest.representations[d.layer];
            let elapsed = self.now - d.started_s;
            if elapsed > 0.0 {
                self.throughput.push(d.bits / 1000.0 / elapsed);
            } else {
                self.throughput.push(f64::MAX);
            }
            self.downloaded_kbits += d.bits / 1000.0;
            self.segments.push(Segment {
                index: d.index as u32,
                duration_s: self.seg_d(),
                bitrate_kbps: d.bits / 1000.0 / self.seg_d(),
                width_px: rep.width_px,
                height_px: rep.height_px,
                quality_layer: rep.quality_layer,
            });
            self.buffer_s += self.seg_d();
        }

        let d = self.seg_d();
        match self.phase {
            Phase::Startup => {
                let threshold = f64::from(self.cfg.startup_segments) * d;
                if self.buffer_s > 0.0 && (self.buffer_s >= threshold || self.all_downloaded()) {
                    self.initial_loading_s = Some(self.now);
                    self.phase = Phase::Playing;
                }
            }
            Phase::Stalled { since, media_at } => {
                let threshold = f64::from(self.cfg.resume_segments) * d;
                if self.buffer_s > 0.0 && (self.buffer_s >= threshold || self.all_downloaded()) {
                    self.stalls.push(StallEvent {
                        start_media_time_s: media_at,
                        duration_s: self.now - since,
                    });
                    self.phase = Phase::Playing;
                }
            }
            Phase::Playing => {
                if self.buffer_s <= 0.0 {
                    self.buffer_s = 0.0;
                    self.phase = if self.all_downloaded() {
                        Phase::Finished
                    } else {
                        Phase::Stalled {
                            since: self.now,
                            media_at: self.media_pos_s,
                        }
                    };
                }
            }
            Phase::Finished => {}
        }
        self.maybe_request(room == next);
        Ok(())
    }

    /// Processes every event at or before `t`.
    pub fn run_until(&mut self, t: f64) -> Result<(), SynthError> {
        while !self.is_finished() && self.next_event_time() <= t {
            self.step()?;
        }
        if !self.is_finished() && t.is_infinite() {
            // Only reachable when no event is pending: the download can never finish.
            return Err(SynthError::MaxWallTime {
                session_id: self.session_id.clone(),
                limit_s: self.cfg.max_wall_time_s,
            });
        }
        Ok(())
    }

    /// Changes the bandwidth cap from time `t` on.
    pub fn set_cap(&mut self, t: f64, cap_kbps: Option<f64>) -> Result<(), SynthError> {
        self.run_until(t)?;
        if cap_kbps != self.cap_kbps {
            if !self.is_finished() {
                self.advance(t);
            }
            self.cap_kbps = cap_kbps;
        }
        Ok(())
    }

    /// State at `t`; every event up to `t` must already be processed.
    pub fn snapshot(&self, t: f64) -> PlaybackSnapshot {
        let dt = (t - self.now).max(0.0);
        let media = match self.phase {
            Phase::Playing => self.media_pos_s + dt.min(self.buffer_s),
            _ => self.media_pos_s,
        };
        let mut stalls = self.stalls.clone();
        if let Phase::Stalled { since, media_at } = self.phase {
            if t > since {
                stalls.push(StallEvent {
                    start_media_time_s: media_at,
                    duration_s: t - since,
                });
            }
        }
        let d = self.seg_d();
        let played: Vec<Segment> = self
            .segments
            .iter()
            .filter(|s| f64::from(s.index) * d < media || self.is_finished())
            .cloned()
            .collect();
        PlaybackSnapshot {
            time_s: t,
            started: self.initial_loading_s.is_some(),
            finished: self.is_finished(),
            initial_loading_s: self.initial_loading_s.unwrap_or(t),
            media_position_s: media,
            current_layer: played.last().map(|s| s.quality_layer),
            stalls,
            played,
        }
    }

    /// Wall-clock end time of a finished session.
    pub fn end_time(&self) -> Option<f64> {
        self.is_finished().then_some(self.now)
    }

    pub fn session(&self) -> Option<StreamingSession> {
        if !self.is_finished() {
            return None;
        }
        Some(StreamingSession {
            session_id: self.session_id.clone(),
            initial_loading_time_s: self.initial_loading_s.unwrap_or(0.0),
            segments: self.segments.clone(),
            stalls: self.stalls.clone(),
            framerate_fps: self.manifest.framerate_fps,
            device_width_px: self.cfg.device_width_px,
            device_height_px: self.cfg.device_height_px,
            abr_id: Some(self.policy.policy_id.clone()),
            trace_id: Some(self.trace.trace_id.clone()),
            representation_count: Some(self.manifest.representations.len() as u32),
        })
    }
}

/// A finished simulation with its bookkeeping totals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub session: StreamingSession,
    pub end_time_s: f64,
    pub downloaded_kbits: f64,
}

pub fn simulate_outcome(
    session_id: &str,
    manifest: &VideoManifest,
    trace: &BandwidthTrace,
    policy: &AbrPolicy,
    cfg: &PlayerConfig,
    seed: u64,
) -> Result<SimOutcome, SynthError> {
    let mut p = Player::new(session_id, manifest, trace, policy, cfg, seed)?;
    p.run_until(f64::INFINITY)?;
    let session = p.session().expect("finished");
    validate_session(&session).map_err(|violations| SynthError::InvalidSession {
        session_id: session_id.to_string(),
        violations,
    })?;
    Ok(SimOutcome {
        end_time_s: p.now,
        downloaded_kbits: p.downloaded_kbits,
        session,
    })
}

/// Simulates one playback of `manifest` over `trace` under `policy`.
pub fn simulate_session(
    manifest: &VideoManifest,
    trace: &BandwidthTrace,
    policy: &AbrPolicy,
    cfg: &PlayerConfig,
    seed: u64,
) -> Result<StreamingSession, SynthError> {
    let id = format!("{}@{}#{seed}", policy.policy_id, trace.trace_id);
    simulate_outcome(&id, manifest, trace, policy, cfg, seed).map(|o| o.session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::abr::AbrKind;
    use crate::synth::trace::trace_library;
    use proptest::prelude::*;

    fn rate_based() -> AbrPolicy {
        AbrPolicy::default_set().remove(0)
    }

    fn flat(cfg: PlayerConfig) -> PlayerConfig {
        PlayerConfig {
            vbr_spread: 0.0,
            ..cfg
        }
    }

    fn conserved(o: &SimOutcome) -> bool {
        let s = &o.session;
        let expect = s.wall_duration_s();
        (o.end_time_s - expect).abs() <= 1e-9 * expect.max(1.0)
    }

    #[test]
    fn surplus_capacity_never_stalls_and_reaches_top_layer() {
        let m = VideoManifest::default_ladder(15, 2.0, 30.0);
        let trace = BandwidthTrace::constant("fast", 10_000.0);
        let s = simulate_session(&m, &trace, &rate_based(), &PlayerConfig::default(), 1).unwrap();
        assert!(s.stalls.is_empty());
        let top = m.top().quality_layer;
        assert_eq!(s.segments[0].quality_layer, 0);
        assert!(s.segments[1..].iter().all(|g| g.quality_layer == top));
    }

    #[test]
    fn bandwidth_equal_to_bitrate_keeps_buffer_at_one_segment() {
        let m = VideoManifest::single(8, 1.0, 1000.0);
        let cfg = flat(PlayerConfig {
            startup_segments: 0,
            ..Default::default()
        });
        let o = simulate_outcome("x", &m, &BandwidthTrace::constant("eq", 1000.0), &rate_based(), &cfg, 0)
            .unwrap();
        // Each arrival coincides with the buffer running dry; arrival wins.
        assert!(o.session.stalls.is_empty());
        assert_eq!(o.session.initial_loading_time_s, 1.0);
        assert_eq!(o.end_time_s, 9.0);
    }

    #[test]
    fn half_bandwidth_stalls_after_every_segment() {
        // Each 1 s segment takes 2 s to arrive: the buffer drains in 1 s and
        // waits 1 s for the next, so n segments give n - 1 stalls of 1 s.
        let n = 7;
        let m = VideoManifest::single(n, 1.0, 1000.0);
        let cfg = flat(PlayerConfig {
            startup_segments: 0,
            ..Default::default()
        });
        let o = simulate_outcome("x", &m, &BandwidthTrace::constant("half", 500.0), &rate_based(), &cfg, 0)
            .unwrap();
        let s = &o.session;
        assert_eq!(s.initial_loading_time_s, 2.0);
        assert_eq!(s.stalls.len(), n as usize - 1);
        for (k, st) in s.stalls.iter().enumerate() {
            assert_eq!(st.start_media_time_s, (k + 1) as f64);
            assert_eq!(st.duration_s, 1.0);
        }
        assert_eq!(o.end_time_s, 2.0 * f64::from(n) + 1.0);
    }

    #[test]
    fn starvation_after_five_seconds_stalls_or_aborts() {
        let m = VideoManifest::default_ladder(20, 2.0, 30.0);
        let trace = BandwidthTrace {
            trace_id: "dead".into(),
            samples: vec![(0.0, 3000.0), (5.0, 0.0)],
        };
        match simulate_session(&m, &trace, &rate_based(), &PlayerConfig::default(), 0) {
            Err(SynthError::MaxWallTime { .. }) => {}
            Ok(s) => assert!(!s.stalls.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn zero_bandwidth_forever_aborts() {
        let m = VideoManifest::default_ladder(5, 2.0, 30.0);
        let r = simulate_session(&m, &BandwidthTrace::constant("zero", 0.0), &rate_based(), &PlayerConfig::default(), 0);
        assert!(matches!(r, Err(SynthError::MaxWallTime { .. })));
    }

    #[test]
    fn outage_is_survived() {
        let m = VideoManifest::default_ladder(12, 2.0, 30.0);
        let outage = trace_library().into_iter().find(|t| t.trace_id == "outage").unwrap();
        for p in AbrPolicy::default_set() {
            let o = simulate_outcome("o", &m, &outage, &p, &PlayerConfig::default(), 3).unwrap();
            assert!(conserved(&o));
        }
    }

    #[test]
    fn buffer_cap_pauses_downloads() {
        let m = VideoManifest::default_ladder(40, 2.0, 30.0);
        let cfg = PlayerConfig {
            max_buffer_s: 8.0,
            ..Default::default()
        };
        let trace = BandwidthTrace::constant("fast", 50_000.0);
        let mut p = Player::new("c", &m, &trace, &rate_based(), &cfg, 0).unwrap();
        let mut t = 0.0;
        while !p.is_finished() {
            t += 0.25;
            p.run_until(t).unwrap();
            assert!(p.buffer_s() <= cfg.max_buffer_s);
        }
        assert!(p.session().unwrap().stalls.is_empty());
    }

    #[test]
    fn interruptions_without_cap_change_are_invisible() {
        let m = VideoManifest::default_ladder(14, 2.0, 30.0);
        for trace in trace_library() {
            for policy in AbrPolicy::default_set() {
                let cfg = PlayerConfig::default();
                let plain = simulate_outcome("s", &m, &trace, &policy, &cfg, 9).unwrap();
                let mut p = Player::new("s", &m, &trace, &policy, &cfg, 9).unwrap();
                let mut t = 0.0;
                while !p.is_finished() {
                    t += 0.7;
                    p.set_cap(t, None).unwrap();
                    let _ = p.snapshot(t);
                }
                assert_eq!(p.session().unwrap(), plain.session);
                assert_eq!(p.end_time().unwrap(), plain.end_time_s);
            }
        }
    }

    #[test]
    fn cap_matches_capped_trace() {
        let m = VideoManifest::default_ladder(10, 2.0, 30.0);
        let trace = trace_library().into_iter().find(|t| t.trace_id == "volatile").unwrap();
        let policy = rate_based();
        let cfg = PlayerConfig::default();
        let mut p = Player::new("s", &m, &trace, &policy, &cfg, 4).unwrap();
        p.set_cap(0.0, Some(1200.0)).unwrap();
        p.run_until(f64::INFINITY).unwrap();
        let direct = simulate_outcome("s", &m, &trace.capped(1200.0), &policy, &cfg, 4).unwrap();
        assert_eq!(p.session().unwrap().segments, direct.session.segments);
        assert_eq!(p.session().unwrap().stalls, direct.session.stalls);
    }

    #[test]
    fn snapshots_are_monotone() {
        let m = VideoManifest::default_ladder(12, 2.0, 30.0);
        let trace = trace_library().into_iter().find(|t| t.trace_id == "periodic_dip").unwrap();
        let mut p = Player::new("s", &m, &trace, &rate_based(), &PlayerConfig::default(), 0).unwrap();
        let mut prev: Option<PlaybackSnapshot> = None;
        let mut t = 0.0;
        while !p.is_finished() {
            t += 0.5;
            p.run_until(t).unwrap();
            let s = p.snapshot(t);
            if let Some(q) = &prev {
                assert!(s.stalls.len() >= q.stalls.len());
                let total = |v: &[StallEvent]| v.iter().map(|x| x.duration_s).sum::<f64>();
                assert!(total(&s.stalls) >= total(&q.stalls));
                assert!(s.media_position_s >= q.media_position_s);
                assert!(s.played.len() >= q.played.len());
            }
            prev = Some(s);
        }
    }

    #[test]
    fn bad_config_rejected() {
        let m = VideoManifest::default_ladder(5, 4.0, 30.0);
        let cfg = PlayerConfig {
            max_buffer_s: 6.0,
            ..Default::default()
        };
        let r = simulate_session(&m, &BandwidthTrace::constant("c", 1000.0), &rate_based(), &cfg, 0);
        assert!(matches!(r, Err(SynthError::InvalidConfig(_))));
    }

    #[test]
    fn scaling_up_can_add_stalls_before_an_outage() {
        // More bandwidth lets the policy pick a heavier layer just before the
        // link dies, so the larger segment is still in flight when the buffer
        // runs dry. Stall monotonicity therefore cannot hold on every trace.
        let trace = BandwidthTrace {
            trace_id: "collapse".into(),
            samples: vec![(0.0, 1800.0), (3.4, 0.0), (5.9, 800.0)],
        };
        let m = VideoManifest::default_ladder(4, 2.0, 30.0);
        let cfg = flat(PlayerConfig::default());
        let base = simulate_session(&m, &trace, &rate_based(), &cfg, 0).unwrap();
        let fast = simulate_session(&m, &trace.scaled(3.0), &rate_based(), &cfg, 0).unwrap();
        assert_eq!(base.total_stall_s(), 0.0);
        assert!(fast.total_stall_s() > 1.5);
    }

    fn non_decreasing_trace() -> impl Strategy<Value = BandwidthTrace> {
        (50.0f64..600.0, prop::collection::vec((0.5f64..8.0, 0.0f64..1500.0), 0..10)).prop_map(
            |(first, steps)| {
                let mut samples = vec![(0.0, first)];
                let mut t = 0.0;
                let mut b = first;
                for (len, up) in steps {
                    t += len;
                    b += up;
                    samples.push((t, b));
                }
                BandwidthTrace {
                    trace_id: "rising".into(),
                    samples,
                }
            },
        )
    }

    fn arb_trace() -> impl Strategy<Value = BandwidthTrace> {
        prop::collection::vec((0.5f64..8.0, prop_oneof![Just(0.0), 100.0f64..6000.0]), 1..12).prop_map(
            |steps| {
                let mut t = 0.0;
                let mut samples = Vec::new();
                for (len, kbps) in steps {
                    samples.push((t, kbps));
                    t += len;
                }
                // Always recover eventually so sessions can finish.
                samples.push((t, 800.0));
                BandwidthTrace {
                    trace_id: "random".into(),
                    samples,
                }
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn sessions_validate_and_conserve(
            trace in arb_trace(),
            policy in 0usize..6,
            n in 3u32..20,
            seed: u64,
        ) {
            let m = VideoManifest::default_ladder(n, 2.0, 30.0);
            let p = &AbrPolicy::default_set()[policy];
            let o = simulate_outcome("p", &m, &trace, p, &PlayerConfig::default(), seed).unwrap();
            prop_assert!(conserved(&o));
            prop_assert!(o.downloaded_kbits <= trace.integral_kbits(0.0, o.end_time_s) * (1.0 + 1e-9));
            prop_assert_eq!(o.session.segments.len(), n as usize);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn scaling_up_never_adds_stalls_on_non_decreasing_traces(
            trace in non_decreasing_trace(),
            factor in 1.0f64..4.0,
            n in 3u32..20,
            seed: u64,
        ) {
            let m = VideoManifest::default_ladder(n, 2.0, 30.0);
            let cfg = PlayerConfig::default();
            let a = simulate_session(&m, &trace, &rate_based(), &cfg, seed).unwrap();
            let b = simulate_session(&m, &trace.scaled(factor), &rate_based(), &cfg, seed).unwrap();
            prop_assert!(b.total_stall_s() <= a.total_stall_s() + 1e-9);
        }
    }

    #[test]
    fn every_policy_kind_is_exercised() {
        let kinds: Vec<_> = AbrPolicy::default_set().into_iter().map(|p| p.kind).collect();
        assert!(kinds.iter().any(|k| matches!(k, AbrKind::OracleCapped { .. })));
        assert_eq!(kinds.len(), 6);
    }
}
