//! Toy-scale training: SGD with momentum, a synthetic oriented-texture
//! dataset, small convolutional classifiers and attention statistics.

mod config;
mod data;
mod model;
mod optim;
mod stats;
mod train;

pub use config::TrainConfig;
pub use data::{SyntheticConfig, SyntheticDataset};
pub use model::{DynamicSpec, Model, ModelSpec, ModelVars, NORM_EPS};
pub use optim::{sgd_step, OptimizerState};
pub use stats::{collect_attention_stats, AttentionStats, LayerAttentionStats, HISTOGRAM_BINS};
pub use train::{evaluate, train, EpochRecord, TrainOptions, TrainRecord};

/// Mean negative log-likelihood of `labels` under the row softmax of `logits`.
pub use crate::nn::cross_entropy as cross_entropy_loss;
