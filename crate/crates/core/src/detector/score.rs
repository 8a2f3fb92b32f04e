use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Autoencoder;
use crate::data::{apply_global_norm, format_timestamp, make_windows, parse_timestamp, MetricFrame, WindowSet};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};

/// Windows reconstructed per forward pass when scoring.
const SCORE_CHUNK: usize = 512;

/// Per-window, per-feature mean squared reconstruction error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub feature_names: Vec<String>,
    pub window_len: usize,
    pub window_starts: Vec<i64>,
    /// Row-major `[window, feature]`.
    pub scores: Vec<f64>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.window_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_starts.is_empty()
    }

    pub fn features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn score(&self, window: usize, feature: usize) -> f64 {
        self.scores[window * self.features() + feature]
    }

    pub fn feature_scores(&self, feature: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.score(i, feature)).collect()
    }

    /// Mean over every window and feature.
    pub fn mean(&self) -> f64 {
        mean_squared_error(&self.scores)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["window_start".to_string()];
        header.extend(self.feature_names.iter().cloned());
        csv.write_record(&header)?;
        for i in 0..self.len() {
            let mut record = vec![format_timestamp(self.window_starts[i])];
            record.extend((0..self.features()).map(|j| self.score(i, j).to_string()));
            csv.write_record(&record)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv(reader: impl Read, path: &Path, window_len: usize) -> Result<Self> {
        let ingest = |row: usize, message: String| Error::Ingestion {
            path: path.to_path_buf(),
            row,
            message,
        };
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.get(0) != Some("window_start") || headers.len() < 2 {
            return Err(ingest(0, "expected header `window_start,<feature>...`".into()));
        }
        let feature_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut series = ScoreSeries {
            feature_names,
            window_len,
            window_starts: Vec::new(),
            scores: Vec::new(),
        };
        for (i, record) in csv.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| ingest(row, e.to_string()))?;
            let ts = parse_timestamp(&record[0])
                .ok_or_else(|| ingest(row, format!("unparseable timestamp {:?}", &record[0])))?;
            if series.window_starts.last().is_some_and(|&last| ts <= last) {
                return Err(ingest(row, "window starts must be strictly increasing".into()));
            }
            series.window_starts.push(ts);
            for cell in record.iter().skip(1) {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| ingest(row, format!("non-numeric score {cell:?}")))?;
                if !(v >= 0.0) {
                    return Err(ingest(row, format!("invalid score {cell:?}")));
                }
                series.scores.push(v);
            }
        }
        if series.is_empty() {
            return Err(Error::EmptyInput {
                path: path.to_path_buf(),
                message: "no score rows".into(),
            });
        }
        Ok(series)
    }
}

pub fn mean_squared_error(errors: &[f64]) -> f64 {
    errors.iter().sum::<f64>() / errors.len() as f64
}

/// `(1/T) Σ_t (ŷ − y)²` for each selected window and feature, row-major `[k, F]`.
pub fn reconstruction_errors(network: &Network, windows: &WindowSet, indices: &[usize]) -> Result<Vec<f64>> {
    let (t, f) = (windows.window_len, windows.features());
    let mut scores = Vec::with_capacity(indices.len() * f);
    for chunk in indices.chunks(SCORE_CHUNK) {
        let input = windows.tensor(chunk);
        let output = network.forward(&input, Mode::Infer)?;
        for (x, y) in input
            .values()
            .chunks_exact(t * f)
            .zip(output.values().chunks_exact(t * f))
        {
            let mut acc = vec![0.0; f];
            for (idx, (a, b)) in x.iter().zip(y).enumerate() {
                let d = b - a;
                acc[idx % f] += d * d;
            }
            scores.extend(acc.into_iter().map(|s| s / t as f64));
        }
    }
    Ok(scores)
}

fn check_features(model: &Autoencoder, found: &[String]) -> Result<()> {
    if model.feature_names() != found {
        return Err(Error::FeatureMismatch {
            expected: model.feature_names().to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

/// Scores windows that were normalized with the model's own moments.
pub fn score_windows(model: &Autoencoder, windows: &WindowSet, indices: &[usize]) -> Result<ScoreSeries> {
    check_features(model, &windows.feature_names)?;
    if windows.window_len != model.window_len {
        return Err(Error::Config(format!(
            "model expects {}-step windows, got {}",
            model.window_len, windows.window_len
        )));
    }
    Ok(ScoreSeries {
        feature_names: windows.feature_names.clone(),
        window_len: windows.window_len,
        window_starts: indices.iter().map(|&i| windows.start_timestamps[i]).collect(),
        scores: reconstruction_errors(&model.network, windows, indices)?,
    })
}

/// Normalizes a raw stat frame with the model's moments and scores every window.
pub fn score_frame(model: &Autoencoder, frame: &MetricFrame, stride: usize) -> Result<ScoreSeries> {
    check_features(model, frame.names())?;
    let normalized = apply_global_norm(frame, &model.normalization)?;
    let windows = make_windows(&normalized, model.window_len, stride)?;
    score_windows(model, &windows, &windows.all_indices())
}
