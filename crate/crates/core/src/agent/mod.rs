//! The instructable policy: frame and instruction encoders, attention over a short
//! memory of past states, a factored 8-step action head with a goal-completion head,
//! behavioral-cloning training, guidance, and the act loop.

mod act;
mod config;
mod logits;
mod model;
mod params;
mod train;

pub use act::{ActOptions, AgentClient};
pub use config::{AgentConfig, ConfigError};
pub use logits::{
    argmax, bc_loss, bc_loss_grad, bucket_to_delta, cfg_combine, delta_to_bucket, sigmoid, softmax, softplus, LossParts,
    PolicyLogits, ShapeError, STEP_WIDTH,
};
pub use model::{
    encode_instruction, encode_observation, example_backward, example_forward, forward, head_forward, token_id, tokenize,
    ExampleCache, ForwardOutput, HeadCache, MemoryState,
};
pub use params::{Checkpoint, CheckpointError, Layout, Parameters, Tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, JOINT_IDS};
pub use train::{loss_and_grad, train, BatchItem, Episode, StepMetrics, TrainError, Trainer, TrainingSet};
