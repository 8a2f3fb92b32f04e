//! Trained detector and its versioned JSON file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::ArchitectureSpec;
use super::train::TrainConfig;
use crate::data::GlobalNorm;
use crate::error::{Error, Result};
use crate::nn::Network;

pub const MODEL_FORMAT: &str = "dbanomaly-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config: TrainConfig,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    pub test_mse: f64,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
}

/// A window autoencoder together with the normalization it was trained under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Autoencoder {
    pub architecture: ArchitectureSpec,
    pub window_len: usize,
    pub normalization: GlobalNorm,
    pub network: Network,
    pub training: Option<TrainingMetadata>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    format_version: u32,
    checksum: String,
    model: Autoencoder,
}

impl Autoencoder {
    pub fn feature_names(&self) -> &[String] {
        &self.normalization.feature_names
    }

    /// SHA-256 of the canonical JSON encoding, used as the model id.
    pub fn checksum(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            checksum: self.checksum()?,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::ModelLoad(format!("invalid JSON: {e}")))?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(MODEL_FORMAT) {
            return Err(Error::ModelLoad(format!("not a model file (format {format:?})")));
        }
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(Error::ModelLoad(format!(
                "unsupported format version {version:?}, expected {MODEL_FORMAT_VERSION}"
            )));
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::ModelLoad(format!("malformed model: {e}")))?;
        let mut model = file.model;
        let actual = model.checksum()?;
        if actual != file.checksum {
            return Err(Error::ModelLoad(format!(
                "checksum mismatch: file says {}, contents hash to {actual}",
                file.checksum
            )));
        }
        model.validate()?;
        Ok(model)
    }

    fn validate(&mut self) -> Result<()> {
        self.network.prepare()?;
        let f = self.normalization.feature_names.len();
        let shape = [self.window_len, f];
        if self.network.input_shape() != shape
            || self.network.output_shape().iter().product::<usize>() != self.window_len * f
        {
            return Err(Error::ModelLoad(format!(
                "network shape {:?} does not match {} steps x {f} features",
                self.network.input_shape(),
                self.window_len
            )));
        }
        if self.normalization.mean.len() != f || self.normalization.std.len() != f {
            return Err(Error::ModelLoad("normalization moments do not match features".into()));
        }
        if self.network.specs() != self.architecture.layer_specs() {
            return Err(Error::ModelLoad(format!(
                "layers do not match architecture {}",
                self.architecture
            )));
        }
        Ok(())
    }
}

pub fn save_model(model: &Autoencoder, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Autoencoder> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ModelLoad(format!("{}: {e}", path.display())))?;
    Autoencoder::from_json(&text)
}
