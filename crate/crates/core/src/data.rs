//! Metric CSV ingestion, whole-period normalization, windowing and
//! chronological train/validation/test splitting.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Seconds between consecutive samples.
pub const SAMPLE_SECONDS: i64 = 60;
pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_STRIDE: usize = 1;
pub const DEFAULT_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];

/// The six main stat metrics used as detector features by default.
pub const DEFAULT_STAT_METRICS: [&str; 6] = [
    "CPU Used",
    "Active Session",
    "Session Logical Reads",
    "Physical Reads",
    "Execute Counts",
    "Lock Waiting Session",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Stat,
    Event,
}

/// Minute-resolution multivariate series. Values are row-major `[time, metric]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFrame {
    names: Vec<String>,
    timestamps: Vec<i64>,
    values: Vec<f64>,
    kind: MetricKind,
}

impl MetricFrame {
    pub fn new(names: Vec<String>, timestamps: Vec<i64>, values: Vec<f64>, kind: MetricKind) -> Result<Self> {
        if values.len() != timestamps.len() * names.len() {
            return Err(Error::shape(
                "metric frame",
                &[timestamps.len(), names.len()],
                &[values.len()],
            ));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::Config(format!("duplicate metric name {name:?}")));
            }
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "timestamps must be strictly increasing (rows {} and {})",
                    i,
                    i + 1
                )));
            }
        }
        if let Some(ts) = timestamps.iter().find(|ts| ts.rem_euclid(SAMPLE_SECONDS) != 0) {
            return Err(Error::Config(format!("timestamp {ts} is not on a minute boundary")));
        }
        Ok(Self {
            names,
            timestamps,
            values,
            kind,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.names.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.names.len();
        &self.values[row * w..(row + 1) * w]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.value(r, col)).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|c| self.column(c))
    }

    /// Reorders (and subsets) columns to `names`.
    pub fn select(&self, names: &[String]) -> Result<MetricFrame> {
        let cols: Option<Vec<usize>> = names
            .iter()
            .map(|n| self.names.iter().position(|m| m == n))
            .collect();
        let cols = cols.ok_or_else(|| Error::FeatureMismatch {
            expected: names.to_vec(),
            found: self.names.clone(),
        })?;
        let mut values = Vec::with_capacity(self.len() * cols.len());
        for r in 0..self.len() {
            values.extend(cols.iter().map(|&c| self.value(r, c)));
        }
        MetricFrame::new(names.to_vec(), self.timestamps.clone(), values, self.kind)
    }

    /// Rows with `start <= timestamp < end`.
    pub fn slice_time(&self, start: i64, end: i64) -> MetricFrame {
        let lo = self.timestamps.partition_point(|&t| t < start);
        let hi = self.timestamps.partition_point(|&t| t < end).max(lo);
        let w = self.width();
        Self {
            names: self.names.clone(),
            timestamps: self.timestamps[lo..hi].to_vec(),
            values: self.values[lo * w..hi * w].to_vec(),
            kind: self.kind,
        }
    }

    /// Row ranges `[start, end)` of gap-free runs.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut segments = Vec::new();
        let mut start = 0;
        for i in 1..=self.len() {
            if i == self.len() || self.timestamps[i] - self.timestamps[i - 1] != SAMPLE_SECONDS {
                if i > start {
                    segments.push((start, i));
                }
                start = i;
            }
        }
        segments
    }
}

pub fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_timestamp(secs: i64) -> String {
    match DateTime::from_timestamp(secs, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => secs.to_string(),
    }
}

pub fn load_metrics(path: impl AsRef<Path>, kind: MetricKind) -> Result<MetricFrame> {
    let path = path.as_ref();
    read_metrics(File::open(path)?, path, kind)
}

/// Parses `timestamp,<metric>...` CSV. Rows are sorted by time; error rows are
/// numbered from 1 in file order, excluding the header.
pub fn read_metrics(reader: impl Read, path: &Path, kind: MetricKind) -> Result<MetricFrame> {
    let ingest = |row: usize, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::EmptyInput {
            path: path.to_path_buf(),
            message: "missing header".into(),
        });
    }
    if !headers[0].eq_ignore_ascii_case("timestamp") {
        return Err(ingest(0, format!("first column must be `timestamp`, found {:?}", &headers[0])));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(ingest(0, "no metric columns".into()));
    }

    let mut rows: Vec<(i64, usize, Vec<f64>)> = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| ingest(row, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(ingest(row, format!("expected {} fields, found {}", headers.len(), record.len())));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| ingest(row, format!("unparseable timestamp {:?}", &record[0])))?;
        if ts.rem_euclid(SAMPLE_SECONDS) != 0 {
            return Err(ingest(row, format!("timestamp {:?} is not on a minute boundary", &record[0])));
        }
        let mut values = Vec::with_capacity(names.len());
        for (c, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(row, format!("non-numeric value {cell:?} in column {:?}", names[c])))?;
            if !v.is_finite() {
                return Err(ingest(row, format!("non-finite value {cell:?} in column {:?}", names[c])));
            }
            values.push(v);
        }
        rows.push((ts, row, values));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    rows.sort_by_key(|(ts, row, _)| (*ts, *row));
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(ingest(
                pair[1].1,
                format!("duplicate timestamp {} (also on row {})", format_timestamp(pair[1].0), pair[0].1),
            ));
        }
    }
    let timestamps = rows.iter().map(|r| r.0).collect();
    let values = rows.into_iter().flat_map(|r| r.2).collect();
    MetricFrame::new(names, timestamps, values, kind)
}

pub fn write_metrics(frame: &MetricFrame, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    write_metrics_to(frame, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_metrics_to(frame: &MetricFrame, writer: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(frame.names.iter().cloned());
    csv.write_record(&header)?;
    for r in 0..frame.len() {
        let mut record = vec![format_timestamp(frame.timestamps[r])];
        record.extend(frame.row(r).iter().map(|v| v.to_string()));
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

/// Whole-period per-feature moments (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalNorm {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_global_norm(frame: &MetricFrame) -> Result<GlobalNorm> {
    if frame.is_empty() {
        return Err(Error::Config("cannot fit normalization on an empty frame".into()));
    }
    let n = frame.len() as f64;
    let mut mean = Vec::with_capacity(frame.width());
    let mut std = Vec::with_capacity(frame.width());
    for (c, name) in frame.names.iter().enumerate() {
        let column = frame.column(c);
        let m = column.iter().sum::<f64>() / n;
        let var = column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = var.sqrt();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Config(format!("feature {name:?} has zero variance")));
        }
        mean.push(m);
        std.push(s);
    }
    Ok(GlobalNorm {
        feature_names: frame.names.clone(),
        mean,
        std,
    })
}

pub fn apply_global_norm(frame: &MetricFrame, norm: &GlobalNorm) -> Result<MetricFrame> {
    if frame.names != norm.feature_names {
        return Err(Error::FeatureMismatch {
            expected: norm.feature_names.clone(),
            found: frame.names.clone(),
        });
    }
    let w = frame.width();
    let values = frame
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (v - norm.mean[i % w]) / norm.std[i % w])
        .collect();
    MetricFrame::new(frame.names.clone(), frame.timestamps.clone(), values, frame.kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Unassigned,
    Train,
    Validation,
    Test,
}

/// Fixed-length gap-free windows, stored as `[N, T, F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub feature_names: Vec<String>,
    pub window_len: usize,
    pub stride: usize,
    windows: Vec<f64>,
    /// Frame row index of each window's first step.
    pub start_rows: Vec<usize>,
    pub start_timestamps: Vec<i64>,
    pub splits: Vec<Split>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.start_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_rows.is_empty()
    }

    pub fn features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn window_size(&self) -> usize {
        self.window_len * self.features()
    }

    /// `[T, F]` values of window `i`, row-major.
    pub fn window(&self, i: usize) -> &[f64] {
        let size = self.window_size();
        &self.windows[i * size..(i + 1) * size]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Stacks the given windows into a `[k, T, F]` tensor.
    pub fn tensor(&self, indices: &[usize]) -> Tensor {
        let mut values = Vec::with_capacity(indices.len() * self.window_size());
        for &i in indices {
            values.extend_from_slice(self.window(i));
        }
        Tensor::new(vec![indices.len(), self.window_len, self.features()], values).expect("sized")
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Windows of `window_len` consecutive minutes taken every `stride` rows
/// within each gap-free segment.
pub fn make_windows(frame: &MetricFrame, window_len: usize, stride: usize) -> Result<WindowSet> {
    if window_len == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be positive".into()));
    }
    if frame.len() < window_len {
        return Err(Error::Config(format!(
            "frame has {} rows, shorter than the window length {window_len}",
            frame.len()
        )));
    }
    let w = frame.width();
    let mut set = WindowSet {
        feature_names: frame.names.clone(),
        window_len,
        stride,
        windows: Vec::new(),
        start_rows: Vec::new(),
        start_timestamps: Vec::new(),
        splits: Vec::new(),
    };
    for (seg_start, seg_end) in frame.segments() {
        let mut start = seg_start;
        while start + window_len <= seg_end {
            set.windows
                .extend_from_slice(&frame.values[start * w..(start + window_len) * w]);
            set.start_rows.push(start);
            set.start_timestamps.push(frame.timestamps[start]);
            set.splits.push(Split::Unassigned);
            start += stride;
        }
    }
    if set.is_empty() {
        return Err(Error::Config(format!(
            "no gap-free run of {window_len} minutes in the frame"
        )));
    }
    Ok(set)
}

/// Window counts for `(train, validation, test)`: validation and test are
/// floored, the remainder goes to train.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let floor = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
    let val = floor(fractions[1]);
    let test = floor(fractions[2]);
    let train = n.saturating_sub(val + test);
    let counts = [train, val, test];
    if counts.contains(&0) {
        return Err(Error::Config(format!(
            "split {fractions:?} of {n} windows leaves an empty split {counts:?}"
        )));
    }
    Ok(counts)
}

/// Chronological split: earliest windows train, then validation, then test.
pub fn split_windows(mut set: WindowSet, fractions: [f64; 3]) -> Result<WindowSet> {
    let [train, val, _] = split_counts(set.len(), fractions)?;
    let mut order: Vec<usize> = set.all_indices();
    order.sort_by_key(|&i| (set.start_timestamps[i], i));
    for (rank, &i) in order.iter().enumerate() {
        set.splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(set)
}
