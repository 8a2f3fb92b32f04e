//! Diagnosis report: ranked periods, their related events, and charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{format_timestamp, MetricFrame, SAMPLE_SECONDS};
use crate::detector::ScoreSeries;
use crate::error::{Error, Result};
use crate::plot::{control_chart_svg, overlay_svg};
use crate::similarity::{match_events, EventMatch, MatchConfig};
use crate::spc::{AnomalyPeriod, Detection};

pub const DEFAULT_TOP_K: usize = 5;
/// Events drawn in each period overlay besides the stat metric.
const OVERLAY_EVENTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model_id: String,
    pub architecture: String,
    pub data_start: String,
    pub data_end: String,
    pub windows: usize,
    pub window_len: usize,
    /// Resolved configuration the report was produced with.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSummary {
    pub feature: String,
    pub center_line: f64,
    pub ucl: f64,
    pub lcl: f64,
    pub sigma: f64,
    pub k: f64,
    pub flagged_windows: usize,
    pub flagged_fraction: f64,
    pub periods: usize,
    pub plot: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub period: AnomalyPeriod,
    pub start: String,
    pub end: String,
    pub chart: String,
    pub matches_by_dtw: Vec<EventMatch>,
    pub matches_by_pearson: Vec<EventMatch>,
    pub plot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub metadata: ReportMetadata,
    pub charts: Vec<ChartSummary>,
    pub periods: Vec<PeriodReport>,
    /// Every emitted file, relative to the report directory.
    pub manifest: Vec<String>,
}

pub struct ReportInputs<'a> {
    pub model_id: String,
    pub architecture: String,
    pub stats: &'a MetricFrame,
    pub events: Option<&'a MetricFrame>,
    pub series: &'a ScoreSeries,
    pub detection: &'a Detection,
    pub top_k: usize,
    pub match_config: MatchConfig,
    pub config: serde_json::Value,
}

/// A report plus the SVG files it references, keyed by relative path.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub report: DiagnosisReport,
    pub files: BTreeMap<String, String>,
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Rows of `events` aligned to the stat timestamps in `[start, end)`.
fn overlay_series(
    stats: &MetricFrame,
    feature: usize,
    events: &MetricFrame,
    names: &[&str],
    start: i64,
    end: i64,
) -> (Vec<i64>, Vec<(String, Vec<f64>)>) {
    let stat_slice = stats.slice_time(start, end);
    let cols: Vec<usize> = names
        .iter()
        .filter_map(|n| events.names().iter().position(|m| m == n))
        .collect();
    let mut timestamps = Vec::new();
    let mut series: Vec<(String, Vec<f64>)> = std::iter::once(stats.names()[feature].clone())
        .chain(cols.iter().map(|&c| events.names()[c].clone()))
        .map(|n| (n, Vec::new()))
        .collect();
    for (row, &t) in stat_slice.timestamps().iter().enumerate() {
        if let Ok(er) = events.timestamps().binary_search(&t) {
            timestamps.push(t);
            series[0].1.push(stat_slice.value(row, feature));
            for (k, &c) in cols.iter().enumerate() {
                series[k + 1].1.push(events.value(er, c));
            }
        }
    }
    (timestamps, series)
}

pub fn build_report(inputs: &ReportInputs<'_>) -> Result<ReportBundle> {
    let series = inputs.series;
    let detection = inputs.detection;
    if detection.features.len() != series.features() {
        return Err(Error::Config("detection and scores describe different features".into()));
    }
    if inputs.stats.is_empty() {
        return Err(Error::Config("report needs stat data".into()));
    }
    let mut files = BTreeMap::new();
    let mut charts = Vec::new();
    let mut chart_paths = BTreeMap::new();
    for (j, fd) in detection.features.iter().enumerate() {
        let path = format!("charts/{:02}_{}.svg", j, slug(&fd.chart.feature));
        files.insert(
            path.clone(),
            control_chart_svg(&fd.chart, &series.window_starts, &series.feature_scores(j), &fd.periods),
        );
        chart_paths.insert(fd.chart.feature.clone(), path.clone());
        charts.push(ChartSummary {
            feature: fd.chart.feature.clone(),
            center_line: fd.chart.center_line,
            ucl: fd.chart.ucl,
            lcl: fd.chart.lcl,
            sigma: fd.chart.sigma,
            k: fd.chart.k,
            flagged_windows: fd.flagged.len(),
            flagged_fraction: fd.flagged.len() as f64 / series.len().max(1) as f64,
            periods: fd.periods.len(),
            plot: path,
        });
    }

    let mut periods = Vec::new();
    for p in detection.ranked.iter().take(inputs.top_k) {
        let chart = chart_paths
            .get(&p.feature)
            .cloned()
            .ok_or_else(|| Error::Internal(format!("period references unknown feature {:?}", p.feature)))?;
        let (matches, plot) = match inputs.events {
            Some(events) => {
                let matches = match_events(inputs.stats, &p.feature, events, p, &inputs.match_config)?;
                let feature = inputs
                    .stats
                    .names()
                    .iter()
                    .position(|n| *n == p.feature)
                    .expect("matched feature exists");
                let names: Vec<&str> = matches.iter().take(OVERLAY_EVENTS).map(|m| m.event_name.as_str()).collect();
                let end = p.end_timestamp + inputs.match_config.margin_minutes as i64 * SAMPLE_SECONDS;
                let (ts, lines) = overlay_series(inputs.stats, feature, events, &names, p.start_timestamp, end);
                let plot = (ts.len() >= 2).then(|| {
                    let path = format!("periods/period_{:02}.svg", p.rank);
                    let title = format!(
                        "#{} {} {} to {} with top events by DTW (z-normalized)",
                        p.rank,
                        p.feature,
                        format_timestamp(p.start_timestamp),
                        format_timestamp(end)
                    );
                    files.insert(path.clone(), overlay_svg(&title, &ts, &lines));
                    path
                });
                (matches, plot)
            }
            None => (Vec::new(), None),
        };
        let mut by_pearson = matches.clone();
        by_pearson.sort_by_key(|m| m.rank_by_pearson);
        periods.push(PeriodReport {
            start: format_timestamp(p.start_timestamp),
            end: format_timestamp(p.end_timestamp),
            period: p.clone(),
            chart,
            matches_by_dtw: matches,
            matches_by_pearson: by_pearson,
            plot,
        });
    }

    let mut manifest: Vec<String> = vec![REPORT_JSON.into(), REPORT_TEXT.into()];
    manifest.extend(files.keys().cloned());
    manifest.sort();
    let ts = inputs.stats.timestamps();
    Ok(ReportBundle {
        report: DiagnosisReport {
            metadata: ReportMetadata {
                model_id: inputs.model_id.clone(),
                architecture: inputs.architecture.clone(),
                data_start: format_timestamp(ts[0]),
                data_end: format_timestamp(ts[ts.len() - 1]),
                windows: series.len(),
                window_len: series.window_len,
                config: inputs.config.clone(),
            },
            charts,
            periods,
            manifest,
        },
        files,
    })
}

impl DiagnosisReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.metadata;
        let _ = writeln!(out, "Anomaly diagnosis report");
        let _ = writeln!(out, "model      {} ({})", m.architecture, m.model_id);
        let _ = writeln!(out, "data       {} .. {}", m.data_start, m.data_end);
        let _ = writeln!(out, "windows    {} x {} minutes", m.windows, m.window_len);
        let _ = writeln!(out);
        let _ = writeln!(out, "Control charts");
        for c in &self.charts {
            let _ = writeln!(
                out,
                "  {:<24} CL {:>10.4}  UCL {:>10.4}  flagged {:>5} ({:.2}%)  periods {}",
                c.feature,
                c.center_line,
                c.ucl,
                c.flagged_windows,
                100.0 * c.flagged_fraction,
                c.periods
            );
        }
        let _ = writeln!(out);
        if self.periods.is_empty() {
            let _ = writeln!(out, "No anomaly periods above the control limits.");
        }
        for p in &self.periods {
            let a = &p.period;
            let _ = writeln!(
                out,
                "#{} {}  {} .. {}  peak {:.4} at {}",
                a.rank,
                a.feature,
                p.start,
                p.end,
                a.peak_score,
                format_timestamp(a.peak_window_start)
            );
            if !a.related_features.is_empty() {
                let _ = writeln!(out, "   also out of control: {}", a.related_features.join(", "));
            }
            for (label, list) in [("DTW", &p.matches_by_dtw), ("Pearson", &p.matches_by_pearson)] {
                let top: Vec<String> = list
                    .iter()
                    .take(OVERLAY_EVENTS)
                    .map(|e| match e.pearson {
                        Some(r) => format!("{} (dtw {:.3}, r {:.3})", e.event_name, e.dtw_distance, r),
                        None => format!("{} (dtw {:.3}, r n/a)", e.event_name, e.dtw_distance),
                    })
                    .collect();
                if !top.is_empty() {
                    let _ = writeln!(out, "   by {label:<8} {}", top.join("; "));
                }
            }
        }
        out
    }
}

impl ReportBundle {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_JSON), self.report.to_json()?)?;
        fs::write(dir.join(REPORT_TEXT), self.report.to_text())?;
        for (path, contents) in &self.files {
            let full = dir.join(path);
            if let Some(parent) = full.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(full, contents)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MetricKind;
    use crate::spc::{detect, DetectConfig};

    fn inputs_fixture() -> (MetricFrame, MetricFrame, ScoreSeries) {
        let n: usize = 120;
        let ts: Vec<i64> = (0..n as i64).map(|i| i * 60).collect();
        let stat: Vec<f64> = (0..n).map(|i| if (60..70).contains(&i) { 9.0 } else { (i % 5) as f64 }).collect();
        let stats = MetricFrame::new(vec!["CPU Used".into()], ts.clone(), stat.clone(), MetricKind::Stat).unwrap();
        let ev: Vec<f64> = (0..n).flat_map(|i| [stat[i.saturating_sub(1)], 1.0 + (i % 3) as f64]).collect();
        let events = MetricFrame::new(vec!["lagged".into(), "noise".into()], ts.clone(), ev, MetricKind::Event).unwrap();
        let windows = n - 9;
        let scores: Vec<f64> = (0..windows).map(|i| if (58..64).contains(&i) { 5.0 } else { 0.1 + (i % 4) as f64 * 0.01 }).collect();
        let series = ScoreSeries {
            feature_names: vec!["CPU Used".into()],
            window_len: 10,
            window_starts: ts[..windows].to_vec(),
            scores,
        };
        (stats, events, series)
    }

    #[test]
    fn report_references_only_emitted_files() {
        let (stats, events, series) = inputs_fixture();
        let detection = detect(&series, &DetectConfig::default()).unwrap();
        let inputs = ReportInputs {
            model_id: "abc".into(),
            architecture: "BTN-(4)-BTN*".into(),
            stats: &stats,
            events: Some(&events),
            series: &series,
            detection: &detection,
            top_k: DEFAULT_TOP_K,
            match_config: MatchConfig::default(),
            config: serde_json::json!({"k": 3.0}),
        };
        let bundle = build_report(&inputs).unwrap();
        let r = &bundle.report;
        assert_eq!(r.periods.len(), 1);
        assert_eq!(r.periods[0].matches_by_dtw[0].event_name, "lagged");
        for p in &r.periods {
            assert!(r.manifest.contains(&p.chart));
            assert!(r.manifest.contains(p.plot.as_ref().unwrap()));
        }
        for c in &r.charts {
            assert!(bundle.files.contains_key(&c.plot));
        }
        assert_eq!(bundle, build_report(&inputs).unwrap());

        let dir = tempfile::tempdir().unwrap();
        bundle.write(dir.path()).unwrap();
        for rel in &r.manifest {
            assert!(dir.path().join(rel).is_file(), "{rel}");
        }
        let text = fs::read_to_string(dir.path().join(REPORT_TEXT)).unwrap();
        assert!(text.contains("#1 CPU Used"));
        let back: DiagnosisReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_JSON)).unwrap()).unwrap();
        assert_eq!(&back, r);
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("Lock Waiting Session"), "lock_waiting_session");
        assert_eq!(slug("enq: TX - row lock"), "enq_tx_row_lock");
    }
}
