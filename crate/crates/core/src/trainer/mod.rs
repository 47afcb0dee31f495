//! Feature-extractor training with a preserved head and optional
//! suppression branches.

mod checkpoint;
mod config;
mod data;
mod features;
mod loss;
mod model;
mod train;

pub use checkpoint::{BestRecord, Checkpoint, RngState, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC};
pub use config::{default_random_branches, ConvBlock, ModelConfig, SuppressionBranch, SuppressionMode};
pub use data::{load_split, ImageSet, Normalization, CHANNELS};
pub use features::{extract_features, features_of, FeatureSet, FEATURES_FORMAT_VERSION};
pub use loss::{combined_loss, objective, random_labels, suppression_cap, LossNodes};
pub use model::{argmax_rows, forward, param_layout, parameter_count, ForwardNodes, Model};
pub use train::{
    forward_eval, predict, train, train_with_progress, EpochLog, PreparedData, RunRecord, StepStats, Trainer, LAST_FILE, LOG_FILE,
    MODEL_FILE, RUN_FILE,
};
