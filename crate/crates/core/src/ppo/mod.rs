//! Recurrent actor-critic trained with clipped-surrogate PPO.

pub mod policy;
pub mod rollout;
pub mod update;

pub use policy::{
    gaussian_log_prob, squash, unsquash, ActOutput, ActionMap, HiddenState, MapKind, PolicyConfig, PolicyNet,
};
pub use rollout::{collect_rollouts, compute_returns, Advantages, EpisodeTrace, RolloutOptions};
pub use update::{ppo_loss, ppo_update, LossParts, Minibatch, PpoConfig, Trainer, UpdateStats};
