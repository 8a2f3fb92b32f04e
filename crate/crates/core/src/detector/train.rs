use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::ArchitectureSpec;
use super::model::{Autoencoder, TrainingMetadata};
use super::score::{reconstruction_errors, mean_squared_error};
use crate::data::{
    apply_global_norm, fit_global_norm, make_windows, split_windows, GlobalNorm, MetricFrame, Split,
    WindowSet, DEFAULT_SPLIT, DEFAULT_STRIDE, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, mse_loss_grad, AdamState, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of Σ‖W‖² over dense weights.
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub seed: u64,
    pub window_len: usize,
    pub stride: usize,
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            l2_lambda: 0.001,
            batch_size: 1500,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            window_len: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            split: DEFAULT_SPLIT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.l2_lambda >= 0.0) {
            return Err(Error::Config("learning rate must be positive and l2 nonnegative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, epochs and patience must be positive".into()));
        }
        if self.window_len < 2 || self.stride == 0 {
            return Err(Error::Config("window length must be >= 2 and stride positive".into()));
        }
        Ok(())
    }
}

/// Per-element mean squared error of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn write_csv(&self, mut writer: impl Write) -> Result<()> {
        writeln!(writer, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            writeln!(writer, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Autoencoder,
    pub history: TrainingHistory,
    /// Per-element reconstruction MSE on the test split (equal to the mean of its scores).
    pub test_mse: f64,
}

/// Mini-batch ADAM on the reconstruction loss plus L2, keeping the snapshot
/// with the lowest validation error. `windows` must already be globally
/// normalized with `norm` and split.
pub fn train(
    windows: &WindowSet,
    norm: &GlobalNorm,
    arch: &ArchitectureSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if windows.feature_names != norm.feature_names {
        return Err(Error::FeatureMismatch {
            expected: norm.feature_names.clone(),
            found: windows.feature_names.clone(),
        });
    }
    let train_idx = windows.indices(Split::Train);
    let val_idx = windows.indices(Split::Validation);
    let test_idx = windows.indices(Split::Test);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config("training needs nonempty train and validation splits".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let input_shape = [windows.window_len, windows.features()];
    let mut network = Network::build(&input_shape, &arch.layer_specs(), &mut rng)?;
    if network.output_shape().iter().product::<usize>() != windows.window_size() {
        return Err(Error::Config(format!("{arch} does not reconstruct its input width")));
    }
    let mut adam = AdamState::new(config.learning_rate);
    let batch_size = config.batch_size.min(train_idx.len());

    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, Network)> = None;
    let mut order = train_idx.clone();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(batch_size).enumerate() {
            let target = windows.tensor(batch);
            let output = network.forward_train(&target)?;
            let loss = mse_loss(&output, &target)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    message: format!("loss is {loss}"),
                });
            }
            loss_sum += loss * batch.len() as f64;
            network.backward(&mse_loss_grad(&output, &target)?)?;
            if config.l2_lambda > 0.0 {
                for p in network.parameters_mut() {
                    if p.decay {
                        for (g, w) in p.grad.values_mut().iter_mut().zip(p.value.values()) {
                            *g += 2.0 * config.l2_lambda * w;
                        }
                    }
                }
            }
            adam.step(&mut network).map_err(|e| match e {
                Error::NonFiniteGradient { layer, kind } => Error::Training {
                    epoch,
                    batch: b,
                    message: format!("non-finite gradient in layer {layer} ({kind})"),
                },
                other => other,
            })?;
        }
        let train_loss = loss_sum / (order.len() * windows.window_size()) as f64;
        let val_loss = mean_squared_error(&reconstruction_errors(&network, windows, &val_idx)?);
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                message: format!("validation loss is {val_loss}"),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("{arch} epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if best.as_ref().is_none_or(|(loss, _)| val_loss < *loss) {
            history.best_epoch = epoch;
            best = Some((val_loss, network.clone()));
        } else if epoch - history.best_epoch >= config.patience {
            break;
        }
    }

    let (best_val_loss, network) = best.expect("at least one epoch ran");
    let test_mse = if test_idx.is_empty() {
        f64::NAN
    } else {
        mean_squared_error(&reconstruction_errors(&network, windows, &test_idx)?)
    };
    let metadata = TrainingMetadata {
        config: config.clone(),
        epochs_run: history.epochs.len(),
        best_epoch: history.best_epoch,
        best_val_loss,
        final_train_loss: history.epochs.last().map_or(f64::NAN, |e| e.train_loss),
        test_mse,
        train_windows: train_idx.len(),
        val_windows: val_idx.len(),
        test_windows: test_idx.len(),
    };
    let model = Autoencoder {
        architecture: arch.clone(),
        window_len: windows.window_len,
        normalization: norm.clone(),
        network,
        training: Some(metadata),
    };
    Ok(TrainOutcome {
        model,
        history,
        test_mse,
    })
}

/// Normalizes, windows and splits a raw stat frame.
pub fn prepare_windows(frame: &MetricFrame, config: &TrainConfig) -> Result<(GlobalNorm, WindowSet)> {
    let norm = fit_global_norm(frame)?;
    let normalized = apply_global_norm(frame, &norm)?;
    let windows = make_windows(&normalized, config.window_len, config.stride)?;
    Ok((norm, split_windows(windows, config.split)?))
}

pub fn train_frame(frame: &MetricFrame, arch: &ArchitectureSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (norm, windows) = prepare_windows(frame, config)?;
    train(&windows, &norm, arch, config)
}
