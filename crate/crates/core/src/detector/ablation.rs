use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::arch::ArchitectureSpec;
use super::train::{train, TrainConfig, TrainOutcome};
use crate::data::{GlobalNorm, WindowSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub architecture: String,
    pub test_mse: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub parameters: usize,
}

/// Trains every architecture with the same data, seed and configuration.
pub fn run_ablation(
    windows: &WindowSet,
    norm: &GlobalNorm,
    architectures: &[ArchitectureSpec],
    config: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    Ok(run_ablation_with_models(windows, norm, architectures, config)?
        .into_iter()
        .map(|(row, _)| row)
        .collect())
}

/// Like [`run_ablation`] but also returns each trained model.
pub fn run_ablation_with_models(
    windows: &WindowSet,
    norm: &GlobalNorm,
    architectures: &[ArchitectureSpec],
    config: &TrainConfig,
) -> Result<Vec<(AblationRow, TrainOutcome)>> {
    if architectures.is_empty() {
        return Err(Error::Config("ablation needs at least one architecture".into()));
    }
    architectures
        .iter()
        .map(|arch| {
            let outcome = train(windows, norm, arch, config).map_err(|e| Error::Ablation {
                arch: arch.to_string(),
                source: Box::new(e),
            })?;
            let row = AblationRow {
                architecture: arch.to_string(),
                test_mse: outcome.test_mse,
                best_epoch: outcome.history.best_epoch,
                best_val_loss: outcome.history.best().map_or(f64::NAN, |e| e.val_loss),
                parameters: outcome.model.network.parameter_count(),
            };
            Ok((row, outcome))
        })
        .collect()
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.architecture.len())
        .chain(["Model (Neurons)".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}  {:>6}", "Model (Neurons)", "Test (MSE)", "Val (MSE)", "Epoch");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>10.4}  {:>10.4}  {:>6}",
            r.architecture, r.test_mse, r.best_val_loss, r.best_epoch
        );
    }
    out
}

pub fn write_csv(rows: &[AblationRow], writer: impl std::io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["architecture", "test_mse", "best_val_loss", "best_epoch", "parameters"])?;
    for r in rows {
        csv.write_record([
            r.architecture.clone(),
            r.test_mse.to_string(),
            r.best_val_loss.to_string(),
            r.best_epoch.to_string(),
            r.parameters.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
