//! Shewhart-style control charts over anomaly scores and anomaly periods.

use serde::{Deserialize, Serialize};

use crate::detector::ScoreSeries;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 3.0;
pub const WARNING_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartRule {
    ThreeSigma,
    TwoSigmaWarning,
    Custom,
}

impl ChartRule {
    pub fn for_k(k: f64) -> Self {
        if k == DEFAULT_SIGMA {
            ChartRule::ThreeSigma
        } else if k == WARNING_SIGMA {
            ChartRule::TwoSigmaWarning
        } else {
            ChartRule::Custom
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlChart {
    pub feature: String,
    pub center_line: f64,
    pub ucl: f64,
    pub lcl: f64,
    pub sigma: f64,
    pub k: f64,
    pub rule: ChartRule,
}

/// Center line at the mean, limits at `mean ± k·s` with the sample (n−1) standard deviation.
pub fn fit_chart(feature: &str, scores: &[f64], k: f64) -> Result<ControlChart> {
    if scores.len() < 2 {
        return Err(Error::Config(format!(
            "control chart for {feature:?} needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    if !(k > 0.0) {
        return Err(Error::Config(format!("sigma multiplier must be positive, got {k}")));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    let sigma = var.sqrt();
    Ok(ControlChart {
        feature: feature.to_string(),
        center_line: mean,
        ucl: mean + k * sigma,
        lcl: mean - k * sigma,
        sigma,
        k,
        rule: ChartRule::for_k(k),
    })
}

/// Indices whose score is strictly above the upper control limit. Low error is
/// never anomalous, so the lower limit does not flag.
pub fn find_out_of_control(scores: &[f64], chart: &ControlChart) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > chart.ucl)
        .map(|(i, _)| i)
        .collect()
}

/// A run of out-of-control windows, spanning `[start, end)` in epoch seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyPeriod {
    pub feature: String,
    pub start_timestamp: i64,
    pub end_timestamp: i64,
    pub peak_score: f64,
    pub peak_window_start: i64,
    pub flagged_windows: usize,
    pub rank: usize,
    /// Other features whose own periods overlapped this one and were folded in.
    #[serde(default)]
    pub related_features: Vec<String>,
}

impl AnomalyPeriod {
    pub fn duration_minutes(&self) -> i64 {
        (self.end_timestamp - self.start_timestamp) / 60
    }

    pub fn overlaps(&self, other: &AnomalyPeriod) -> bool {
        self.start_timestamp < other.end_timestamp && other.start_timestamp < self.end_timestamp
    }
}

fn rank_in_place(periods: &mut [AnomalyPeriod]) {
    periods.sort_by(|a, b| {
        b.peak_score
            .total_cmp(&a.peak_score)
            .then(a.start_timestamp.cmp(&b.start_timestamp))
            .then(a.feature.cmp(&b.feature))
    });
    for (i, p) in periods.iter_mut().enumerate() {
        p.rank = i + 1;
    }
}

/// Merges sorted flagged window indices into periods. Windows at most
/// `gap_tolerance` unflagged indices apart share a period, which spans from
/// the first window's start to the last window's start plus `window_len` minutes.
pub fn merge_periods(
    feature: &str,
    flagged: &[usize],
    window_starts: &[i64],
    scores: &[f64],
    window_len: usize,
    gap_tolerance: usize,
) -> Vec<AnomalyPeriod> {
    let mut periods = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    let close = |run: &[usize], periods: &mut Vec<AnomalyPeriod>| {
        let (Some(&first), Some(&last)) = (run.first(), run.last()) else {
            return;
        };
        let peak = run
            .iter()
            .copied()
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
            .expect("nonempty run");
        periods.push(AnomalyPeriod {
            feature: feature.to_string(),
            start_timestamp: window_starts[first],
            end_timestamp: window_starts[last] + 60 * window_len as i64,
            peak_score: scores[peak],
            peak_window_start: window_starts[peak],
            flagged_windows: run.len(),
            rank: 0,
            related_features: Vec::new(),
        });
    };
    for &idx in flagged {
        if let Some(&prev) = run.last() {
            if idx > prev + gap_tolerance + 1 {
                close(&run, &mut periods);
                run.clear();
            }
        }
        run.push(idx);
    }
    close(&run, &mut periods);
    rank_in_place(&mut periods);
    periods
}

/// Ranks periods from all features by peak score. A period overlapping in
/// time with a higher-ranked one is folded into it as a related feature.
pub fn consolidate_periods(periods: &[AnomalyPeriod]) -> Vec<AnomalyPeriod> {
    let mut sorted = periods.to_vec();
    rank_in_place(&mut sorted);
    let mut kept: Vec<AnomalyPeriod> = Vec::new();
    for p in sorted {
        match kept.iter_mut().find(|k| k.overlaps(&p)) {
            Some(k) => {
                if k.feature != p.feature && !k.related_features.contains(&p.feature) {
                    k.related_features.push(p.feature.clone());
                }
            }
            None => kept.push(p),
        }
    }
    for (i, p) in kept.iter_mut().enumerate() {
        p.rank = i + 1;
    }
    kept
}

/// Where control limits come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ChartBaseline {
    /// Fit on the evaluated series itself.
    SelfFit,
    /// Fit on reference scores, e.g. the training windows.
    Reference(ScoreSeries),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    pub k: f64,
    pub gap_tolerance: usize,
    pub baseline: ChartBaseline,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_SIGMA,
            gap_tolerance: 0,
            baseline: ChartBaseline::SelfFit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDetection {
    pub chart: ControlChart,
    pub flagged: Vec<usize>,
    pub periods: Vec<AnomalyPeriod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub window_len: usize,
    pub features: Vec<FeatureDetection>,
    /// Consolidated ranking across features.
    pub ranked: Vec<AnomalyPeriod>,
}

impl Detection {
    pub fn flagged_fraction(&self, feature: usize, windows: usize) -> f64 {
        self.features[feature].flagged.len() as f64 / windows as f64
    }
}

pub fn detect(series: &ScoreSeries, config: &DetectConfig) -> Result<Detection> {
    if let ChartBaseline::Reference(reference) = &config.baseline {
        if reference.feature_names != series.feature_names {
            return Err(Error::FeatureMismatch {
                expected: series.feature_names.clone(),
                found: reference.feature_names.clone(),
            });
        }
    }
    let mut features = Vec::with_capacity(series.features());
    let mut all = Vec::new();
    for (j, name) in series.feature_names.iter().enumerate() {
        let scores = series.feature_scores(j);
        let chart = match &config.baseline {
            ChartBaseline::SelfFit => fit_chart(name, &scores, config.k)?,
            ChartBaseline::Reference(reference) => fit_chart(name, &reference.feature_scores(j), config.k)?,
        };
        let flagged = find_out_of_control(&scores, &chart);
        let periods = merge_periods(
            name,
            &flagged,
            &series.window_starts,
            &scores,
            series.window_len,
            config.gap_tolerance,
        );
        all.extend(periods.iter().cloned());
        features.push(FeatureDetection {
            chart,
            flagged,
            periods,
        });
    }
    Ok(Detection {
        window_len: series.window_len,
        features,
        ranked: consolidate_periods(&all),
    })
}
