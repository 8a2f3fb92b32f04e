//! Architecture grammar, autoencoder training with validation-based
//! selection, per-window anomaly scoring and model persistence.

mod ablation;
mod arch;
mod model;
mod score;
mod train;

pub use ablation::{format_table, run_ablation, run_ablation_with_models, write_csv as write_ablation_csv, AblationRow};
pub use arch::{
    parse_architecture, ArchitectureSpec, Token, TokenKind, DEFAULT_ARCHITECTURE, REFERENCE_ARCHITECTURES,
};
pub use model::{load_model, save_model, Autoencoder, TrainingMetadata, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use score::{mean_squared_error, reconstruction_errors, score_frame, score_windows, ScoreSeries};
pub use train::{prepare_windows, train, train_frame, EpochRecord, TrainConfig, TrainOutcome, TrainingHistory};
