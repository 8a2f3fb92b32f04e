//! JSON configuration file mirroring the command-line flags.

use std::path::Path;

use dbanomaly::similarity::{LocalCost, NormalizeMode};
use dbanomaly::{Error, Result};
use serde::{Deserialize, Serialize};

/// Every field is optional; a flag given on the command line wins over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub minutes: Option<usize>,
    pub no_injections: Option<bool>,
    pub arch: Option<String>,
    pub archs: Option<Vec<String>>,
    pub features: Option<Vec<String>>,
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub patience: Option<usize>,
    pub split: Option<[f64; 3]>,
    pub k: Option<f64>,
    pub gap_tolerance: Option<usize>,
    pub top_k: Option<usize>,
    pub margin: Option<usize>,
    pub normalize: Option<NormalizeMode>,
    pub cost: Option<LocalCost>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
