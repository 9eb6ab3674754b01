//! Reinforcement-learning merge controller: observation, rewards, policy
//! networks and PPO training.

pub mod nn;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod state;
pub mod train;

pub use policy::{BetaTransform, Policy};
pub use ppo::Transition;
pub use reward::RewardConfig;
pub use state::{build_state, RlState, STATE_DIM};
pub use train::{
    eval_seed, evaluate, run_episode, summarize, train, Checkpoint, Driver, EnvConfig, EvalSummary, PpoConfig, TraceRow, Trainer,
};
