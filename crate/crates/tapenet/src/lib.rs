//! Training, evaluation, and the command-line surface for the tape-machine
//! controller. The environment lives in `tapenet-core`, the differentiable
//! kernel and network in `tapenet-nn`.

pub mod config;
pub mod eval;
pub mod learner;
pub mod rollout;
pub mod train;

pub use config::{Dtype, RewardScheme, TrainConfig};
pub use eval::{
    evaluate_policy, evaluate_with, summarize_trials, BestTracker, EvalReport, TrialSummary,
};
pub use learner::{policy_gradient_update, LossWeights, UpdateStats};
pub use rollout::{
    discounted_returns, episode_reward, run_episode, Controller, Decision, EpisodeTrace,
    OracleController, PolicyController, StepRecord,
};
pub use train::{train, TrainError, TrainOutcome};
