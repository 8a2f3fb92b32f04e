//! Seeded synthetic DBMS workloads with labeled injected disorders.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{MetricFrame, MetricKind, DEFAULT_STAT_METRICS, SAMPLE_SECONDS};
use crate::error::{Error, Result};
use crate::spc::AnomalyPeriod;

/// 2026-01-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_767_225_600;
pub const MINUTES_PER_DAY: f64 = 1440.0;

const EVENT_NAMES: [&str; 12] = [
    "db file sequential read",
    "db file scattered read",
    "direct path read",
    "log file sync",
    "log file parallel write",
    "enq: TX - row lock contention",
    "latch: cache buffers chains",
    "buffer busy waits",
    "library cache lock",
    "read by other session",
    "cursor: pin S wait on X",
    "gc buffer busy acquire",
];

pub fn event_name(i: usize) -> String {
    EVENT_NAMES
        .get(i)
        .map_or_else(|| format!("event {i:02}"), |s| s.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBaseline {
    pub name: String,
    pub level: f64,
    pub daily_amplitude: f64,
    pub daily_period_minutes: f64,
    pub phase_minutes: f64,
    /// Change in level per day.
    pub trend_per_day: f64,
    pub noise_sigma: f64,
    /// Sensitivity of the level to the shared workload drift.
    pub drift_coupling: f64,
}

impl FeatureBaseline {
    /// Deterministic part of the series at `minute`.
    pub fn deterministic(&self, minute: usize) -> f64 {
        let t = minute as f64;
        self.level
            + self.daily_amplitude * (TAU * (t + self.phase_minutes) / self.daily_period_minutes).sin()
            + self.trend_per_day * t / MINUTES_PER_DAY
    }
}

pub fn default_baselines() -> Vec<FeatureBaseline> {
    let mk = |i: usize, level: f64, amp: f64, trend: f64, noise: f64, coupling: f64, phase: f64| FeatureBaseline {
        name: DEFAULT_STAT_METRICS[i].to_string(),
        level,
        daily_amplitude: amp,
        daily_period_minutes: MINUTES_PER_DAY,
        phase_minutes: phase,
        trend_per_day: trend,
        noise_sigma: noise,
        drift_coupling: coupling,
    };
    vec![
        mk(0, 40.0, 15.0, 0.8, 2.0, 0.3, 0.0),
        mk(1, 20.0, 8.0, 0.3, 1.5, 0.3, 10.0),
        mk(2, 50_000.0, 20_000.0, 600.0, 2_000.0, 0.25, 0.0),
        mk(3, 800.0, 300.0, 15.0, 50.0, 0.3, 30.0),
        mk(4, 12_000.0, 5_000.0, 120.0, 400.0, 0.25, 5.0),
        mk(5, 2.0, 0.5, 0.0, 0.4, 0.2, 60.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InjectionKind {
    /// Sudden peak decaying over the duration.
    Spike,
    /// Rectangular shift in level.
    LevelShift,
    /// Linear build-up, coupled to a second feature (lock waits and active sessions).
    LockPileup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub kind: InjectionKind,
    pub feature: String,
    pub start_minute: usize,
    pub duration_minutes: usize,
    pub magnitude: f64,
    #[serde(default)]
    pub linked_events: Vec<String>,
    /// Lag of linked events; drawn from 1..=3 when absent.
    #[serde(default)]
    pub lag_minutes: Option<usize>,
    /// Linked event bump as a multiple of the event's level.
    #[serde(default = "default_event_gain")]
    pub event_gain: f64,
    /// Second feature of a lock pileup; defaults to the other of
    /// Lock Waiting Session and Active Session.
    #[serde(default)]
    pub coupled_feature: Option<String>,
}

fn default_event_gain() -> f64 {
    4.0
}

impl Injection {
    /// Offset added at `tau` minutes into the injection.
    pub fn shape(&self, tau: usize) -> f64 {
        if tau >= self.duration_minutes {
            return 0.0;
        }
        let d = self.duration_minutes as f64;
        let m = self.magnitude;
        match self.kind {
            InjectionKind::Spike => m * (-3.0 * tau as f64 / d).exp(),
            InjectionKind::LevelShift => m,
            InjectionKind::LockPileup => m * (tau as f64 + 1.0) / d,
        }
    }

    fn coupled(&self, features: &[String]) -> Option<String> {
        if self.kind != InjectionKind::LockPileup {
            return None;
        }
        let lock = DEFAULT_STAT_METRICS[5];
        let active = DEFAULT_STAT_METRICS[1];
        let name = self.coupled_feature.clone().unwrap_or_else(|| {
            if self.feature == lock { active } else { lock }.to_string()
        });
        (name != self.feature && features.contains(&name)).then_some(name)
    }

    fn end_minute(&self) -> usize {
        self.start_minute + self.duration_minutes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub duration_minutes: usize,
    pub start_timestamp: i64,
    pub stat_features: Vec<FeatureBaseline>,
    pub event_count: usize,
    /// Standard deviation of the slow shared workload drift (relative to level).
    pub drift_sigma: f64,
    /// Lag-one autocorrelation of the drift.
    pub drift_persistence: f64,
    pub injections: Vec<Injection>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_minutes: 10_080,
            start_timestamp: DEFAULT_START,
            stat_features: default_baselines(),
            event_count: 8,
            drift_sigma: 0.4,
            drift_persistence: 0.998,
            injections: Vec::new(),
        }
    }
}

impl ScenarioSpec {
    /// Default workload with three disorders: an active-session spike, a
    /// physical-read level shift and a lock pileup, each linked to one event.
    pub fn with_default_injections(seed: u64, duration_minutes: usize) -> Self {
        let at = |fraction: f64| (duration_minutes as f64 * fraction) as usize;
        let injection = |kind, feature: usize, start, duration, magnitude, event: usize| Injection {
            kind,
            feature: DEFAULT_STAT_METRICS[feature].to_string(),
            start_minute: start,
            duration_minutes: duration,
            magnitude,
            linked_events: vec![event_name(event)],
            lag_minutes: None,
            event_gain: default_event_gain(),
            coupled_feature: None,
        };
        Self {
            seed,
            duration_minutes,
            injections: vec![
                injection(InjectionKind::Spike, 1, at(0.3), 20, 80.0, 5),
                injection(InjectionKind::LevelShift, 3, at(0.55), 45, 1_000.0, 2),
                injection(InjectionKind::LockPileup, 5, at(0.8), 40, 5.0, 3),
            ],
            ..Self::default()
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.stat_features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_minutes < 2 || self.stat_features.is_empty() {
            return Err(Error::Config("scenario needs at least 2 minutes and 1 feature".into()));
        }
        if self.start_timestamp.rem_euclid(SAMPLE_SECONDS) != 0 {
            return Err(Error::Config("scenario start must be on a minute boundary".into()));
        }
        if !(0.0..1.0).contains(&self.drift_persistence) || !(self.drift_sigma >= 0.0) {
            return Err(Error::Config("drift persistence must be in [0, 1) and sigma nonnegative".into()));
        }
        for f in &self.stat_features {
            if !(f.daily_period_minutes > 0.0) || !(f.noise_sigma >= 0.0) {
                return Err(Error::Config(format!("invalid baseline for {:?}", f.name)));
            }
        }
        let names = self.feature_names();
        let events: Vec<String> = (0..self.event_count).map(event_name).collect();
        let mut claimed: Vec<(String, usize, usize)> = Vec::new();
        for (i, inj) in self.injections.iter().enumerate() {
            if !names.contains(&inj.feature) {
                return Err(Error::Config(format!("injection {i}: unknown feature {:?}", inj.feature)));
            }
            if !(inj.magnitude > 0.0) || inj.duration_minutes == 0 {
                return Err(Error::Config(format!(
                    "injection {i}: magnitude and duration must be positive"
                )));
            }
            if inj.end_minute() > self.duration_minutes {
                return Err(Error::Config(format!("injection {i} extends past the scenario end")));
            }
            if let Some(e) = inj.linked_events.iter().find(|e| !events.contains(e)) {
                return Err(Error::Config(format!("injection {i}: unknown event {e:?}")));
            }
            if inj.lag_minutes.is_some_and(|lag| lag >= self.duration_minutes) {
                return Err(Error::Config(format!("injection {i}: lag exceeds the scenario")));
            }
            let affected = std::iter::once(inj.feature.clone()).chain(inj.coupled(&names));
            for feature in affected {
                if let Some((_, s, e)) = claimed
                    .iter()
                    .find(|(f, s, e)| *f == feature && inj.start_minute < *e && *s < inj.end_minute())
                {
                    return Err(Error::Config(format!(
                        "injection {i} overlaps minutes {s}..{e} already injected on {feature:?}"
                    )));
                }
                claimed.push((feature, inj.start_minute, inj.end_minute()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedEvent {
    pub name: String,
    pub lag_minutes: usize,
}

/// One injected disorder, covering minutes `[start_minute, end_minute)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthInterval {
    pub kind: InjectionKind,
    pub feature: String,
    pub features: Vec<String>,
    pub start_minute: usize,
    pub end_minute: usize,
    pub start_timestamp: i64,
    pub end_timestamp: i64,
    pub magnitude: f64,
    /// Magnitude in units of the feature's injection-free standard deviation.
    pub relative_magnitude: f64,
    pub linked_events: Vec<LinkedEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub intervals: Vec<TruthInterval>,
}

impl GroundTruth {
    /// Index of the interval with the largest relative magnitude.
    pub fn largest(&self) -> Option<usize> {
        (0..self.intervals.len()).max_by(|&a, &b| {
            self.intervals[a]
                .relative_magnitude
                .total_cmp(&self.intervals[b].relative_magnitude)
                .then(b.cmp(&a))
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub stats: MetricFrame,
    pub events: MetricFrame,
    pub truth: GroundTruth,
}

struct EventBaseline {
    level: f64,
    amplitude: f64,
    phase: f64,
    noise: f64,
    coupling: f64,
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let n = spec.duration_minutes;
    let names = spec.feature_names();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    // Slow AR(1) drift shared by every metric.
    let rho = spec.drift_persistence;
    let innovation = spec.drift_sigma * (1.0 - rho * rho).sqrt();
    let mut drift = Vec::with_capacity(n);
    let mut d = spec.drift_sigma * normal();
    for _ in 0..n {
        drift.push(d);
        d = rho * d + innovation * normal();
    }

    let width = names.len();
    let mut stats = vec![0.0; n * width];
    for t in 0..n {
        for (j, f) in spec.stat_features.iter().enumerate() {
            let noise = if f.noise_sigma > 0.0 { f.noise_sigma * normal() } else { 0.0 };
            stats[t * width + j] = f.deterministic(t) + f.level * f.drift_coupling * drift[t] + noise;
        }
    }
    let baseline_std: Vec<f64> = (0..width)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|t| stats[t * width + j]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt()
        })
        .collect();

    let events: Vec<EventBaseline> = (0..spec.event_count)
        .map(|_| {
            let level = 10f64.powf(rng.random_range(0.0..3.0));
            EventBaseline {
                level,
                amplitude: level * rng.random_range(0.1..0.4),
                phase: rng.random_range(0.0..MINUTES_PER_DAY),
                noise: level * rng.random_range(0.05..0.15),
                coupling: rng.random_range(0.0..0.5),
            }
        })
        .collect();
    let ew = spec.event_count;
    let mut event_values = vec![0.0; n * ew];
    for t in 0..n {
        for (e, b) in events.iter().enumerate() {
            let v = b.level
                + b.amplitude * (TAU * (t as f64 + b.phase) / MINUTES_PER_DAY).sin()
                + b.level * b.coupling * drift[t]
                + b.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            event_values[t * ew + e] = v;
        }
    }

    let mut intervals = Vec::with_capacity(spec.injections.len());
    for inj in &spec.injections {
        let j = names.iter().position(|n| *n == inj.feature).expect("validated");
        let coupled = inj.coupled(&names);
        let cj = coupled.as_ref().map(|c| names.iter().position(|n| n == c).expect("validated"));
        for tau in 0..inj.duration_minutes {
            let t = inj.start_minute + tau;
            let delta = inj.shape(tau);
            stats[t * width + j] += delta;
            if let Some(cj) = cj {
                stats[t * width + cj] += delta;
            }
        }
        let lag = inj.lag_minutes.unwrap_or_else(|| rng.random_range(1..=3));
        let mut linked = Vec::new();
        for name in &inj.linked_events {
            let e = (0..ew).find(|&e| event_name(e) == *name).expect("validated");
            for tau in 0..inj.duration_minutes {
                let t = inj.start_minute + tau + lag;
                if t < n {
                    event_values[t * ew + e] += inj.event_gain * events[e].level * inj.shape(tau) / inj.magnitude;
                }
            }
            linked.push(LinkedEvent {
                name: name.clone(),
                lag_minutes: lag,
            });
        }
        let mut features = vec![inj.feature.clone()];
        features.extend(coupled);
        intervals.push(TruthInterval {
            kind: inj.kind,
            feature: inj.feature.clone(),
            features,
            start_minute: inj.start_minute,
            end_minute: inj.end_minute(),
            start_timestamp: spec.start_timestamp + inj.start_minute as i64 * SAMPLE_SECONDS,
            end_timestamp: spec.start_timestamp + inj.end_minute() as i64 * SAMPLE_SECONDS,
            magnitude: inj.magnitude,
            relative_magnitude: inj.magnitude / baseline_std[j].max(f64::MIN_POSITIVE),
            linked_events: linked,
        });
    }
    for v in &mut event_values {
        *v = v.max(0.0);
    }

    let timestamps: Vec<i64> = (0..n as i64).map(|t| spec.start_timestamp + t * SAMPLE_SECONDS).collect();
    Ok(Scenario {
        stats: MetricFrame::new(names, timestamps.clone(), stats, MetricKind::Stat)?,
        events: MetricFrame::new((0..ew).map(event_name).collect(), timestamps, event_values, MetricKind::Event)?,
        truth: GroundTruth {
            seed: spec.seed,
            intervals,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthHit {
    pub interval: usize,
    /// Best (lowest) rank among top-k periods hitting this interval.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvaluation {
    pub k: usize,
    pub top1_hit: bool,
    /// Truth intervals hit by the rank-1 period.
    pub top1_intervals: Vec<usize>,
    pub recall_at_k: f64,
    pub precision_at_k: f64,
    pub hits: Vec<TruthHit>,
}

/// Overlap in seconds between `[a0, a1)` and `[b0, b1)`.
pub fn overlap(a0: i64, a1: i64, b0: i64, b1: i64) -> i64 {
    (a1.min(b1) - a0.max(b0)).max(0)
}

/// A period hits a truth interval when they share at least half of the interval.
pub fn hits(period: &AnomalyPeriod, truth: &TruthInterval) -> bool {
    let shared = overlap(
        period.start_timestamp,
        period.end_timestamp,
        truth.start_timestamp,
        truth.end_timestamp,
    );
    2 * shared >= truth.end_timestamp - truth.start_timestamp
}

/// Scores ranked periods (in rank order) against the truth. Recall is 1 when
/// there is nothing to find; precision is 0 when nothing was reported.
pub fn evaluate_detection(periods: &[AnomalyPeriod], truth: &GroundTruth, k: usize) -> DetectionEvaluation {
    let top = &periods[..k.min(periods.len())];
    let hit_list: Vec<TruthHit> = truth
        .intervals
        .iter()
        .enumerate()
        .map(|(i, iv)| TruthHit {
            interval: i,
            rank: top.iter().position(|p| hits(p, iv)).map(|r| r + 1),
        })
        .collect();
    let found = hit_list.iter().filter(|h| h.rank.is_some()).count();
    let useful = top.iter().filter(|p| truth.intervals.iter().any(|iv| hits(p, iv))).count();
    let top1_intervals: Vec<usize> = periods
        .first()
        .map(|p| {
            (0..truth.intervals.len())
                .filter(|&i| hits(p, &truth.intervals[i]))
                .collect()
        })
        .unwrap_or_default();
    DetectionEvaluation {
        k,
        top1_hit: !top1_intervals.is_empty(),
        top1_intervals,
        recall_at_k: if truth.intervals.is_empty() {
            1.0
        } else {
            found as f64 / truth.intervals.len() as f64
        },
        precision_at_k: if top.is_empty() { 0.0 } else { useful as f64 / top.len() as f64 },
        hits: hit_list,
    }
}

/// Small stat/event set where one event is a lagged, high-magnitude copy of
/// the stat trajectory and another a faint, noisy copy of its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFixture {
    pub stats: MetricFrame,
    pub events: MetricFrame,
    pub period: AnomalyPeriod,
    pub stat_feature: String,
    pub lagged_event: String,
    pub shape_event: String,
}

pub fn lag_shape_fixture() -> EventFixture {
    const LEN: usize = 40;
    const LAG: usize = 2;
    let spike = [0.0, 0.5, 1.0, 0.8, 0.5, 0.2];
    let stat: Vec<f64> = (0..LEN)
        .map(|t| {
            let s = t.checked_sub(15).and_then(|k| spike.get(k)).copied().unwrap_or(0.0);
            5.0 + 0.3 * (TAU * t as f64 / 9.0).sin() + 10.0 * s
        })
        .collect();
    let lagged: Vec<f64> = (0..LEN).map(|t| 50.0 * stat[t.saturating_sub(LAG)]).collect();
    let shape: Vec<f64> = (0..LEN)
        .map(|t| 0.05 * stat[t] + 0.03 * (2.3 * t as f64).sin() * (0.7 * t as f64).cos())
        .collect();
    let unrelated: Vec<f64> = (0..LEN).map(|t| 3.0 + (TAU * t as f64 / 13.0).cos()).collect();

    let timestamps: Vec<i64> = (0..LEN as i64).map(|t| DEFAULT_START + t * SAMPLE_SECONDS).collect();
    let event_names = vec!["lagged copy".to_string(), "shape copy".to_string(), "unrelated".to_string()];
    let values = (0..LEN).flat_map(|t| [lagged[t], shape[t], unrelated[t]]).collect();
    EventFixture {
        stats: MetricFrame::new(vec!["Active Session".into()], timestamps.clone(), stat, MetricKind::Stat)
            .expect("valid fixture"),
        events: MetricFrame::new(event_names.clone(), timestamps, values, MetricKind::Event).expect("valid fixture"),
        period: AnomalyPeriod {
            feature: "Active Session".into(),
            start_timestamp: DEFAULT_START,
            end_timestamp: DEFAULT_START + LEN as i64 * SAMPLE_SECONDS,
            peak_score: 1.0,
            peak_window_start: DEFAULT_START,
            flagged_windows: 1,
            rank: 1,
            related_features: Vec::new(),
        },
        stat_feature: "Active Session".into(),
        lagged_event: event_names[0].clone(),
        shape_event: event_names[1].clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{match_events, MatchConfig, NormalizeMode};

    fn quiet(seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            seed,
            duration_minutes: 500,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn noiseless_scenario_is_the_deterministic_baseline() {
        let mut spec = quiet(3);
        spec.drift_sigma = 0.0;
        for f in &mut spec.stat_features {
            f.noise_sigma = 0.0;
        }
        let s = generate(&spec).unwrap();
        for t in [0usize, 1, 250, 499] {
            for (j, f) in spec.stat_features.iter().enumerate() {
                assert_eq!(s.stats.value(t, j), f.deterministic(t));
            }
        }
    }

    #[test]
    fn same_seed_same_frames() {
        let spec = ScenarioSpec::with_default_injections(9, 2_000);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = ScenarioSpec::with_default_injections(10, 2_000);
        assert_ne!(generate(&spec).unwrap().stats, generate(&other).unwrap().stats);
    }

    #[test]
    fn spike_adds_at_least_its_magnitude() {
        let mut spec = quiet(1);
        let clean = generate(&spec).unwrap();
        spec.injections.push(Injection {
            kind: InjectionKind::Spike,
            feature: "CPU Used".into(),
            start_minute: 100,
            duration_minutes: 10,
            magnitude: 25.0,
            linked_events: vec![event_name(0)],
            lag_minutes: Some(2),
            event_gain: 4.0,
            coupled_feature: None,
        });
        let dirty = generate(&spec).unwrap();
        assert!(dirty.stats.value(100, 0) - clean.stats.value(100, 0) >= 25.0 - 1e-9);
        assert_eq!(dirty.stats.value(99, 0), clean.stats.value(99, 0));
        // the linked event moves two minutes later
        assert_eq!(dirty.events.value(101, 0), clean.events.value(101, 0));
        assert!(dirty.events.value(102, 0) > clean.events.value(102, 0));
        let iv = &dirty.truth.intervals[0];
        assert_eq!((iv.start_minute, iv.end_minute), (100, 110));
        assert_eq!(iv.linked_events[0].lag_minutes, 2);
    }

    #[test]
    fn lock_pileup_moves_active_sessions_too() {
        let mut spec = quiet(2);
        let clean = generate(&spec).unwrap();
        spec.injections.push(Injection {
            kind: InjectionKind::LockPileup,
            feature: "Lock Waiting Session".into(),
            start_minute: 50,
            duration_minutes: 20,
            magnitude: 4.0,
            linked_events: vec![],
            lag_minutes: None,
            event_gain: 4.0,
            coupled_feature: None,
        });
        let dirty = generate(&spec).unwrap();
        let diff = |j: usize, t: usize| dirty.stats.value(t, j) - clean.stats.value(t, j);
        assert!((diff(5, 69) - 4.0).abs() < 1e-9);
        assert!((diff(1, 69) - 4.0).abs() < 1e-9);
        assert_eq!(diff(0, 69), 0.0);
        assert_eq!(dirty.truth.intervals[0].features, vec!["Lock Waiting Session", "Active Session"]);
    }

    #[test]
    fn overlapping_injections_are_rejected() {
        let mut spec = ScenarioSpec::with_default_injections(0, 2_000);
        let mut dup = spec.injections[0].clone();
        dup.start_minute += 5;
        spec.injections.push(dup);
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
        let mut spec = ScenarioSpec::with_default_injections(0, 2_000);
        spec.injections[0].start_minute = 1_990;
        assert!(generate(&spec).is_err());
        let mut spec = ScenarioSpec::with_default_injections(0, 2_000);
        spec.injections[0].magnitude = 0.0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn labels_round_trip_as_json() {
        let s = generate(&ScenarioSpec::with_default_injections(4, 3_000)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        s.truth.save(&path).unwrap();
        assert_eq!(GroundTruth::load(&path).unwrap(), s.truth);
        assert_eq!(s.truth.largest(), Some(0));
    }

    fn period(start_minute: i64, end_minute: i64, rank: usize) -> AnomalyPeriod {
        AnomalyPeriod {
            feature: "x".into(),
            start_timestamp: start_minute * 60,
            end_timestamp: end_minute * 60,
            peak_score: 1.0,
            peak_window_start: start_minute * 60,
            flagged_windows: 1,
            rank,
            related_features: vec![],
        }
    }

    fn truth(spans: &[(usize, usize)]) -> GroundTruth {
        GroundTruth {
            seed: 0,
            intervals: spans
                .iter()
                .map(|&(s, e)| TruthInterval {
                    kind: InjectionKind::Spike,
                    feature: "x".into(),
                    features: vec!["x".into()],
                    start_minute: s,
                    end_minute: e,
                    start_timestamp: s as i64 * 60,
                    end_timestamp: e as i64 * 60,
                    magnitude: 1.0,
                    relative_magnitude: 1.0,
                    linked_events: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn evaluation_examples() {
        let t = truth(&[(0, 50), (200, 230)]);
        let exact = [period(0, 50, 1), period(200, 230, 2)];
        let e = evaluate_detection(&exact, &t, 2);
        assert_eq!((e.recall_at_k, e.precision_at_k, e.top1_hit), (1.0, 1.0, true));

        let e = evaluate_detection(&[], &t, 3);
        assert_eq!((e.recall_at_k, e.precision_at_k, e.top1_hit), (0.0, 0.0, false));

        // shifted by half a 30-minute window: 30 of 50 minutes shared
        let t1 = truth(&[(0, 50)]);
        assert!(hits(&period(20, 80, 1), &t1.intervals[0]));
        assert!(!hits(&period(26, 80, 1), &t1.intervals[0]));

        let e = evaluate_detection(&[period(500, 530, 1), period(0, 50, 2)], &t, 1);
        assert_eq!((e.recall_at_k, e.top1_hit), (0.0, false));
        let e = evaluate_detection(&[period(500, 530, 1), period(0, 50, 2)], &t, 2);
        assert_eq!((e.recall_at_k, e.precision_at_k), (0.5, 0.5));
        assert_eq!(e.hits[0].rank, Some(2));
    }

    #[test]
    fn fixture_splits_the_two_measures() {
        let fx = lag_shape_fixture();
        let cfg = MatchConfig {
            normalize: NormalizeMode::ZScore,
            ..MatchConfig::default()
        };
        let m = match_events(&fx.stats, &fx.stat_feature, &fx.events, &fx.period, &cfg).unwrap();
        let by = |name: &str| m.iter().find(|e| e.event_name == name).unwrap().clone();
        assert_eq!(by(&fx.lagged_event).rank_by_dtw, 1, "{m:?}");
        assert_eq!(by(&fx.shape_event).rank_by_pearson, 1, "{m:?}");
        assert_ne!(by(&fx.lagged_event).rank_by_pearson, 1);
    }
}
