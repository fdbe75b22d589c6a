use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::features::{segment_quality, FeatureVector, VqiConfig};
use crate::session::Segment;
use crate::synth::Representation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationPolicy {
    /// Greedy marginal-gain water-filling on predicted QoE.
    Qoe,
    /// Capacity divided evenly among active sessions.
    Equal,
}

impl FromStr for AllocationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qoe" => Ok(Self::Qoe),
            "equal" => Ok(Self::Equal),
            other => Err(format!("unknown allocation policy `{other}` (expected qoe or equal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocatorConfig {
    /// Number of quanta the distributable capacity is cut into.
    pub quanta: u32,
    /// Fraction of the equal share every active session receives up front.
    pub floor_fraction: f64,
    /// Media seconds over which a new share is assumed to act.
    pub horizon_s: f64,
    /// The probe assumes the client picks the highest layer within `safety * share`.
    pub safety: f64,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            quanta: 64,
            floor_fraction: 0.25,
            horizon_s: 10.0,
            safety: 0.9,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |why: &str| Err(PipelineError::InvalidConfig(why.to_string()));
        if self.quanta == 0 {
            return bad("allocator quanta must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.floor_fraction) {
            return bad("allocator floor_fraction must lie in [0, 1]");
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return bad("allocator horizon_s must be positive");
        }
        if !(self.safety > 0.0 && self.safety.is_finite()) {
            return bad("allocator safety must be positive");
        }
        Ok(())
    }
}

/// What the resource manager knows about one active session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub features: FeatureVector,
    pub elapsed_media_s: f64,
    pub ladder: Vec<Representation>,
    pub device_pixels: f64,
    /// Path bandwidth the session could use without a cap, when the network knows it.
    pub path_kbps: Option<f64>,
    /// Emission time of the message the state comes from; `None` before the first delivery.
    pub observed_emit_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionShare {
    pub session_id: String,
    pub share_kbps: f64,
    pub predicted_qoe: f64,
    pub observed_emit_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationDecision {
    pub epoch_time_s: f64,
    pub policy: AllocationPolicy,
    pub capacity_kbps: f64,
    /// Ordered by session id.
    pub shares: Vec<SessionShare>,
    /// Sum of the predicted QoE at the granted shares.
    pub objective: f64,
}

impl AllocationDecision {
    pub fn total_share_kbps(&self) -> f64 {
        self.shares.iter().map(|s| s.share_kbps).fold(0.0, |a, b| a + b)
    }
}

/// Features of `state` had it streamed the next `horizon_s` media seconds at
/// the layer sustainable under `min(share_kbps, path_kbps)`. Only f7 and f10 move.
pub fn probe_features(state: &SessionState, share_kbps: f64, cfg: &AllocatorConfig, vqi: &VqiConfig) -> FeatureVector {
    let mut f = state.features;
    let usable = state.path_kbps.map_or(share_kbps, |p| share_kbps.min(p));
    let Some(rep) = state
        .ladder
        .iter()
        .rev()
        .find(|r| r.bitrate_kbps <= cfg.safety * usable)
        .or(state.ladder.first())
    else {
        return f;
    };
    let seg = Segment {
        index: 0,
        duration_s: 1.0,
        bitrate_kbps: rep.bitrate_kbps,
        width_px: rep.width_px,
        height_px: rep.height_px,
        quality_layer: rep.quality_layer,
    };
    let q = segment_quality(&seg, state.device_pixels, vqi);
    let w = cfg.horizon_s / (state.elapsed_media_s.max(0.0) + cfg.horizon_s);
    f.f7_mean_bitrate_kbps = (1.0 - w) * f.f7_mean_bitrate_kbps + w * rep.bitrate_kbps;
    f.f10_visual_quality_index = (1.0 - w) * f.f10_visual_quality_index + w * q;
    f
}

/// Trims the largest shares until the in-order sum is within `capacity`.
fn fit_to_capacity(shares: &mut [f64], capacity: f64) {
    loop {
        let sum = shares.iter().fold(0.0, |a, b| a + b);
        if sum <= capacity {
            return;
        }
        let (i, &top) = shares
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("sum above capacity implies a share");
        let trimmed = (top - (sum - capacity)).max(0.0);
        shares[i] = if trimmed < top {
            trimmed
        } else {
            f64::from_bits(top.to_bits() - 1)
        };
    }
}

fn same_state(a: &SessionState, b: &SessionState) -> bool {
    a.features == b.features
        && a.elapsed_media_s == b.elapsed_media_s
        && a.ladder == b.ladder
        && a.device_pixels == b.device_pixels
        && a.path_kbps == b.path_kbps
}

/// Sessions in identical states pool their quanta and split them evenly,
/// the remainder going to the smaller ids.
fn balance_identical(order: &[&SessionState], counts: &mut [usize]) {
    let mut done = vec![false; order.len()];
    for i in 0..order.len() {
        if done[i] {
            continue;
        }
        let group: Vec<usize> = (i..order.len())
            .filter(|&j| !done[j] && same_state(order[i], order[j]))
            .collect();
        let total: usize = group.iter().map(|&j| counts[j]).sum();
        for (k, &j) in group.iter().enumerate() {
            counts[j] = total / group.len() + usize::from(k < total % group.len());
            done[j] = true;
        }
    }
}

/// `capacity / n` for each of `n` sessions, never summing above `capacity`.
pub fn equal_split(capacity_kbps: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut v = vec![capacity_kbps / n as f64; n];
    fit_to_capacity(&mut v, capacity_kbps);
    v
}

/// Splits `capacity_kbps` among the active sessions.
///
/// The QoE policy first gives every session `floor_fraction` of the equal
/// share, then hands out the rest in `quanta` equal quanta. Each step grants
/// the run of quanta with the highest probed QoE gain per quantum, so a session
/// whose next layer lies several quanta away is not starved by a flat
/// neighbourhood. Ties go to the session with the smaller share, then the
/// smaller session id, then the shorter run. Sessions in identical states end with shares at
/// most one quantum apart.
pub fn allocate_resources(
    epoch_time_s: f64,
    states: &[SessionState],
    capacity_kbps: f64,
    policy: AllocationPolicy,
    cfg: &AllocatorConfig,
    vqi: &VqiConfig,
    predict: &dyn Fn(&FeatureVector) -> Result<f64, PipelineError>,
) -> Result<AllocationDecision, PipelineError> {
    if !(capacity_kbps > 0.0 && capacity_kbps.is_finite()) {
        return Err(PipelineError::Capacity(capacity_kbps));
    }
    cfg.validate()?;
    let mut order: Vec<&SessionState> = states.iter().collect();
    order.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let n = order.len();
    let value = |i: usize, share: f64| predict(&probe_features(order[i], share, cfg, vqi));

    let shares = match policy {
        AllocationPolicy::Equal => equal_split(capacity_kbps, n),
        AllocationPolicy::Qoe if n == 0 => Vec::new(),
        AllocationPolicy::Qoe => {
            let floor = cfg.floor_fraction * capacity_kbps / n as f64;
            let total = cfg.quanta as usize;
            let q = (capacity_kbps - floor * n as f64).max(0.0) / total as f64;
            // values[i][c]: probed QoE of session i holding c quanta above the floor.
            let mut values = Vec::with_capacity(n);
            for i in 0..n {
                let v: Vec<f64> = (0..=total)
                    .map(|c| value(i, floor + c as f64 * q))
                    .collect::<Result<_, _>>()?;
                values.push(v);
            }
            let mut counts = vec![0usize; n];
            let mut left = total;
            while left > 0 {
                // Best gain per quantum over every jump still affordable.
                let mut best: Option<(f64, usize, usize)> = None;
                for i in 0..n {
                    for j in 1..=left {
                        let rate = (values[i][counts[i] + j] - values[i][counts[i]]) / j as f64;
                        let better = match best {
                            None => true,
                            Some((r, bi, bj)) => match rate.total_cmp(&r) {
                                Ordering::Greater => true,
                                Ordering::Less => false,
                                Ordering::Equal => (counts[i], i, j) < (counts[bi], bi, bj),
                            },
                        };
                        if better {
                            best = Some((rate, i, j));
                        }
                    }
                }
                let (_, i, j) = best.expect("n > 0 and left > 0");
                counts[i] += j;
                left -= j;
            }
            balance_identical(&order, &mut counts);
            let mut v: Vec<f64> = counts.iter().map(|&c| floor + c as f64 * q).collect();
            fit_to_capacity(&mut v, capacity_kbps);
            v
        }
    };

    let mut out = Vec::with_capacity(n);
    for (i, (st, &share)) in order.iter().zip(&shares).enumerate() {
        out.push(SessionShare {
            session_id: st.session_id.clone(),
            share_kbps: share,
            predicted_qoe: value(i, share)?,
            observed_emit_time_s: st.observed_emit_time_s,
        });
    }
    Ok(AllocationDecision {
        epoch_time_s,
        policy,
        capacity_kbps,
        objective: out.iter().map(|s| s.predicted_qoe).fold(0.0, |a, b| a + b),
        shares: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::VideoManifest;
    use proptest::prelude::*;

    fn state(id: &str, bitrate: f64, elapsed: f64) -> SessionState {
        let mut f = FeatureVector::from_array([1.0, 0.0, 0.0, 0.0, 0.0, elapsed, bitrate, 30.0, 2.0, 3.0]);
        f.f10_visual_quality_index = 1.0 + bitrate / 2000.0;
        SessionState {
            session_id: id.to_string(),
            features: f,
            elapsed_media_s: elapsed,
            ladder: VideoManifest::default_ladder(10, 2.0, 30.0).representations,
            device_pixels: 1920.0 * 1080.0,
            path_kbps: None,
            observed_emit_time_s: Some(4.0),
        }
    }

    /// Concave in VQI, so each session's marginal gain shrinks as it grows.
    fn concave(f: &FeatureVector) -> Result<f64, PipelineError> {
        Ok(((f.f10_visual_quality_index - 1.0) / 4.0).sqrt())
    }

    fn flat(_: &FeatureVector) -> Result<f64, PipelineError> {
        Ok(0.5)
    }

    /// Piecewise constant, like a tree ensemble.
    fn steps(f: &FeatureVector) -> Result<f64, PipelineError> {
        Ok((f.f7_mean_bitrate_kbps / 1000.0).floor() / 5.0)
    }

    fn run(states: &[SessionState], cap: f64, policy: AllocationPolicy, p: &dyn Fn(&FeatureVector) -> Result<f64, PipelineError>) -> AllocationDecision {
        allocate_resources(0.0, states, cap, policy, &AllocatorConfig::default(), &VqiConfig::default(), p).unwrap()
    }

    #[test]
    fn single_session_gets_everything() {
        for policy in [AllocationPolicy::Qoe, AllocationPolicy::Equal] {
            let d = run(&[state("a", 1000.0, 5.0)], 5000.0, policy, &concave);
            assert_eq!(d.shares.len(), 1);
            assert!((d.shares[0].share_kbps - 5000.0).abs() <= 1e-9 * 5000.0);
            assert!(d.shares[0].share_kbps <= 5000.0);
        }
    }

    #[test]
    fn identical_sessions_split_evenly() {
        let cfg = AllocatorConfig::default();
        let cap = 6000.0;
        let quantum = cap * (1.0 - cfg.floor_fraction) / f64::from(cfg.quanta);
        for p in [&concave as &dyn Fn(&FeatureVector) -> Result<f64, PipelineError>, &flat, &steps] {
            let d = run(&[state("b", 800.0, 6.0), state("a", 800.0, 6.0)], cap, AllocationPolicy::Qoe, p);
            assert_eq!(d.shares[0].session_id, "a");
            assert!((d.shares[0].share_kbps - d.shares[1].share_kbps).abs() <= quantum + 1e-9);
        }
    }

    #[test]
    fn no_sessions_gives_an_empty_decision() {
        let d = run(&[], 1000.0, AllocationPolicy::Qoe, &concave);
        assert!(d.shares.is_empty());
        assert_eq!(d.objective, 0.0);
    }

    #[test]
    fn bad_capacity_is_rejected() {
        for cap in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let r = allocate_resources(
                0.0,
                &[state("a", 1.0, 1.0)],
                cap,
                AllocationPolicy::Qoe,
                &AllocatorConfig::default(),
                &VqiConfig::default(),
                &concave,
            );
            assert!(matches!(r, Err(PipelineError::Capacity(_))));
        }
    }

    #[test]
    fn probe_moves_only_bandwidth_features() {
        let s = state("a", 500.0, 10.0);
        let lo = probe_features(&s, 300.0, &AllocatorConfig::default(), &VqiConfig::default());
        let hi = probe_features(&s, 6000.0, &AllocatorConfig::default(), &VqiConfig::default());
        assert!(hi.f7_mean_bitrate_kbps > lo.f7_mean_bitrate_kbps);
        assert!(hi.f10_visual_quality_index > lo.f10_visual_quality_index);
        let (a, b) = (lo.to_array(), hi.to_array());
        for j in [0, 1, 2, 3, 4, 5, 7, 8] {
            assert_eq!(a[j], b[j]);
        }
        // Half weight on the horizon: (500 + 4300) / 2.
        assert_eq!(hi.f7_mean_bitrate_kbps, 2400.0);
    }

    #[test]
    fn probe_cannot_use_more_than_the_path() {
        let mut s = state("a", 500.0, 0.0);
        s.path_kbps = Some(600.0);
        let cfg = AllocatorConfig::default();
        let vqi = VqiConfig::default();
        assert_eq!(probe_features(&s, 5000.0, &cfg, &vqi), probe_features(&s, 700.0, &cfg, &vqi));
        assert_eq!(probe_features(&s, 5000.0, &cfg, &vqi).f7_mean_bitrate_kbps, 235.0);
    }

    #[test]
    fn qoe_objective_beats_equal_on_uneven_sessions() {
        // One session already has plenty of quality; the other gains more from bandwidth.
        let states = [state("rich", 4300.0, 40.0), state("poor", 300.0, 2.0)];
        let q = run(&states, 4000.0, AllocationPolicy::Qoe, &concave);
        let e = run(&states, 4000.0, AllocationPolicy::Equal, &concave);
        assert!(q.objective >= e.objective, "{} < {}", q.objective, e.objective);
    }

    #[test]
    fn lookahead_crosses_flat_stretches() {
        // One quantum never changes the step predictor's output on its own.
        let states = [state("a", 0.0, 0.0), state("b", 100.0, 0.0), state("c", 3000.0, 100.0)];
        let d = run(&states, 6000.0, AllocationPolicy::Qoe, &steps);
        let e = run(&states, 6000.0, AllocationPolicy::Equal, &steps);
        assert!(d.objective > e.objective, "{} vs {}", d.objective, e.objective);
    }

    proptest! {
        #[test]
        fn shares_are_non_negative_and_within_capacity(
            rates in proptest::collection::vec((100.0..5000.0f64, 0.0..100.0f64), 0..12),
            cap in 1.0..1e5f64,
            qoe in any::<bool>(),
        ) {
            let states: Vec<SessionState> = rates
                .iter()
                .enumerate()
                .map(|(i, &(r, e))| state(&format!("s{i:02}"), r, e))
                .collect();
            let policy = if qoe { AllocationPolicy::Qoe } else { AllocationPolicy::Equal };
            let d = run(&states, cap, policy, &concave);
            prop_assert_eq!(d.shares.len(), states.len());
            prop_assert!(d.shares.iter().all(|s| s.share_kbps >= 0.0));
            prop_assert!(d.total_share_kbps() <= cap);
            prop_assert_eq!(&d, &run(&states, cap, policy, &concave));
        }
    }
}
