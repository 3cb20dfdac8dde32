//! Offline contextual-bandit queue policy: segment state, expert labels from
//! clustered handover features, and a transformer that imitates the expert.

mod expert;
mod model;
mod persist;
mod qoe;
mod state;
mod train;

use thiserror::Error;

pub use expert::{
    best_action, build_expert, expert_action, expert_action_for_state, kmeans, mean_reward_by_action, ExpertTable,
    FeatureScale, DEFAULT_CLUSTERS,
};
pub use model::{
    argmax, backward_batch, cross_entropy, forward, forward_batch, infer, positional_table, softmax, tokens_of, Dropout,
    ForwardCache, LayerWeights, ModelConfig, PolicyWeights, Tensor, TensorMut,
};
pub use persist::{
    load_expert, load_weights, round_to_f32, save_expert, save_weights, ArtifactKind, Manifest, TensorEntry, MANIFEST_FILE,
    TENSORS_FILE,
};
pub use qoe::{normalize_dataset, qoe, Action, Experience, Normalization, QoEWeights, ACTION_LIMITS_MS};
pub use train::{
    accuracy, fold_indices, predict, predict_logits, train, write_train_log, Hyperparams, TrainLogRow, TrainOutcome,
};
pub use state::{build_state, state_from_serving, SegmentState, HANDOVER_CAP, STATE_DIM};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("segment starting at {start} s does not fit a {duration} s schedule")]
    SegmentOutOfRange { start: usize, duration: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("artifact format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
