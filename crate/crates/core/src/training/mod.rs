//! Actor-learner training: experience history, curriculum, rollouts and the
//! four module losses.

pub mod config;
pub mod curriculum;
pub mod episode;
pub mod history;
pub mod model;
pub mod run;
pub mod worker;

pub use config::{Budget, LearningRates, LossWeights, OptimConfig, TrainConfig};
pub use curriculum::{default_stages, CurriculumEvent, CurriculumState, Stage};
pub use episode::{learned_plan, true_plan, Episode, Percept, PerceptionMode, Sensor, Transition};
pub use history::{ExperienceFrame, ExperienceHistory};
pub use model::{Model, ModelConfig, Module};
pub use run::{load_run, train, RunMeta, TrainReport};
pub use worker::{
    agent_grads, learning_rates, localization_grads, reward_map_grads, vlm_grads, EpisodeSummary, IterationStats, Rollout, RolloutStep, Worker,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
