//! Soft Actor-Critic with a squashed-Gaussian actor on the configurable observation
//! and twin critics on the privileged state.

mod checkpoint;
mod policy;
mod replay;
mod sac;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use policy::{
    critic_input, log1m_tanh_sq, mean_action, offset_action, offset_head, squash, ActorNet, CriticNet, SquashedSample,
    CRITIC_INPUT_DIM, LOG_STD_INIT, LOG_STD_MAX, LOG_STD_MIN,
};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::{standard_normal, SacAgent, SacConfig, SacLosses};
pub use train::{
    evaluate_policy, read_learning_curve, train, write_learning_curve, EpisodeRecord, EvalSummary, TrainOutput,
    TrainSchedule,
};

use crate::env::EnvError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("replay buffer holds {have} transitions, need {need}")]
    NotEnoughData { have: usize, need: usize },
    #[error("training diverged at update {update}: non-finite loss or parameters")]
    DivergedTraining { update: u64 },
    #[error("invalid SAC config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
