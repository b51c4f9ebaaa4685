//! Toy-scale differentiable scene transcending: a depth estimator, two
//! causal temporal estimators, a stand-in text/mask head, every training
//! loss, gradient checking, AdamW and a deterministic trainer.
//!
//! All arithmetic is f64. Parameters are kept f32-representable so that
//! checkpoints (f32 on disk) reload bit-identically.

mod checkpoint;
mod estimators;
mod features;
mod gradcheck;
mod losses;
mod optim;
mod params;
pub mod tape;
mod tensor;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use estimators::{
    depth_estimate, init_from, positions, temporal_rollout, DepthEstimator, ModelConfig, Regression, TemporalEstimator,
    ToyHead,
};
pub use features::FixtureFeatures;
pub use gradcheck::{check_model_gradients, grad_check, random_batch, GradCheck, GRAD_CHECK_STEP};
pub use losses::{
    consistency_losses, evaluate, loss_and_grad, regression_loss, total_loss, Component, LossComponents, LossConfig,
    LossTerm, LossWeights, Model, PsgFeatures, TrainBatch,
};
pub use optim::{AdamW, AdamWConfig, Schedule};
pub use params::{round_f32, ParamSet};
pub use tensor::{FeatureGrid, FeatureSequence, Matrix};
pub use train::{StepReport, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum TranscendError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
