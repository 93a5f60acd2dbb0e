//! Safety MDP over augmented states `(h, z)`.

pub mod env;
pub mod episode;
pub mod power;

pub use env::{
    collapsed_reward, literal_step, reward, risk_from_value, AugmentedState, EpisodeConfig, Plant, ReachEnv,
    RewardVector, Status, Step,
};
pub use episode::{
    run_episode, run_episode_with_horizon, run_literal_episode, ConstantPolicy, EpisodeOutcome, Policy, ZeroPolicy,
};
pub use power::{PowerEnv, PowerEnvConfig, PowerPlant};
