//! Q-network, DQN training and checkpoints.

mod checkpoint;
mod dqn;
mod env;
mod mlp;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dqn::{td_targets, DqnTrainer, Environment, Hyperparams, ReplayBuffer, StepOutcome, Transition};
pub use env::{train_dqn, TrafficEnv, TrainedNet};
pub use mlp::{Gradients, Layer, Mlp};
