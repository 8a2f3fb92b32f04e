//! Ranking wait-event metrics against a stat metric inside an anomaly period.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::data::{MetricFrame, SAMPLE_SECONDS};
use crate::error::{Error, Result};
use crate::spc::AnomalyPeriod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalCost {
    #[default]
    Absolute,
    Squared,
}

impl LocalCost {
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            LocalCost::Absolute => (a - b).abs(),
            LocalCost::Squared => (a - b) * (a - b),
        }
    }
}

pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    dtw_distance_with(a, b, LocalCost::Absolute)
}

/// Unconstrained dynamic time warping with match, insert and delete steps.
pub fn dtw_distance_with(a: &[f64], b: &[f64], cost: LocalCost) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("DTW needs two nonempty series".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = cost.eval(x, b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Sample correlation, `None` when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "pearson needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Config("pearson needs at least 2 points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)))
}

/// Zero mean, unit population deviation. Constant series map to zeros.
pub fn z_normalize(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sd = (series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0.0; series.len()];
    }
    series.iter().map(|x| (x - mean) / sd).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    #[default]
    ZScore,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub normalize: NormalizeMode,
    pub cost: LocalCost,
    /// Minutes added after the period end when slicing.
    pub margin_minutes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatch {
    pub event_name: String,
    pub dtw_distance: f64,
    pub pearson: Option<f64>,
    pub rank_by_dtw: usize,
    pub rank_by_pearson: usize,
}

/// Scores every event column of `events` against the stat column `stat_feature`
/// of `stats` over the period (plus margin), using timestamps present in both.
/// The result is ordered by DTW rank.
pub fn match_events(
    stats: &MetricFrame,
    stat_feature: &str,
    events: &MetricFrame,
    period: &AnomalyPeriod,
    config: &MatchConfig,
) -> Result<Vec<EventMatch>> {
    let col = stats
        .names()
        .iter()
        .position(|n| n == stat_feature)
        .ok_or_else(|| Error::FeatureMismatch {
            expected: vec![stat_feature.to_string()],
            found: stats.names().to_vec(),
        })?;
    let end = period.end_timestamp + config.margin_minutes as i64 * SAMPLE_SECONDS;
    let stat_slice = stats.slice_time(period.start_timestamp, end);
    let event_slice = events.slice_time(period.start_timestamp, end);

    let mut rows = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (st, et) = (stat_slice.timestamps(), event_slice.timestamps());
    while i < st.len() && j < et.len() {
        match st[i].cmp(&et[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                rows.push((i, j));
                i += 1;
                j += 1;
            }
        }
    }
    if rows.len() < 2 || events.width() == 0 {
        log::warn!(
            "no event data overlaps the period starting {} for {stat_feature}",
            period.start_timestamp
        );
        return Ok(Vec::new());
    }
    let prepare = |s: Vec<f64>| match config.normalize {
        NormalizeMode::ZScore => z_normalize(&s),
        NormalizeMode::Raw => s,
    };
    let stat_series = prepare(rows.iter().map(|&(i, _)| stat_slice.value(i, col)).collect());

    let score = |e: usize| -> Result<EventMatch> {
        let series = prepare(rows.iter().map(|&(_, j)| event_slice.value(j, e)).collect());
        Ok(EventMatch {
            event_name: events.names()[e].clone(),
            dtw_distance: dtw_distance_with(&stat_series, &series, config.cost)?,
            pearson: pearson(&stat_series, &series)?,
            rank_by_dtw: 0,
            rank_by_pearson: 0,
        })
    };
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(events.width());
    let per = events.width().div_ceil(workers);
    let mut matches: Vec<EventMatch> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let score = &score;
                scope.spawn(move || {
                    (w * per..((w + 1) * per).min(events.width()))
                        .map(score)
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Internal("event scoring thread panicked".into()))?)
            .collect::<Result<Vec<Vec<_>>>>()
    })?
    .into_iter()
    .flatten()
    .collect();

    rank_matches(&mut matches);
    Ok(matches)
}

/// Assigns both ranks (ties keep input order) and sorts by DTW rank.
pub fn rank_matches(matches: &mut [EventMatch]) {
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.sort_by(|&a, &b| {
        match (matches[a].pearson, matches[b].pearson) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
        .then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        matches[i].rank_by_pearson = rank + 1;
    }
    order.sort_by(|&a, &b| matches[a].dtw_distance.total_cmp(&matches[b].dtw_distance).then(a.cmp(&b)));
    for (rank, &i) in order.iter().enumerate() {
        matches[i].rank_by_dtw = rank + 1;
    }
    matches.sort_by_key(|m| m.rank_by_dtw);
}
