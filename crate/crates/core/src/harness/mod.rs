//! Experiment orchestration: configuration, the acting/learning loop,
//! deterministic evaluation, checkpointing, logging, and the baseline
//! comparison suites.

mod agent;
pub mod bench;
mod checkpoint;
pub mod config;
mod eval;
pub mod runlog;
mod train;

pub use agent::{agent_factory, build_env, derive_seed, MpoAgent};
pub use checkpoint::{load_checkpoint, Checkpoint};
pub use config::{AgentKind, ConfigError, ExperimentConfig, Profile};
pub use eval::{evaluate_policy, run_eval, EvalSummary, SUCCESS_REWARD};
pub use runlog::{
    read_episode_csv, read_learner_jsonl, write_episode_csv, write_eval_csv,
    write_learner_jsonl, EpisodeRecord, EvalRecord, LearnerRecord, RunLog,
};
pub use train::{resume_training, run_training, TrainOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("environment: {0}")]
    Env(#[from] crate::env::EnvError),
    #[error("network: {0}")]
    Diff(#[from] crate::autodiff::DiffError),
    #[error("improvement: {0}")]
    Mpo(#[from] crate::mpo::MpoError),
    #[error("critic: {0}")]
    Critic(#[from] crate::critic::CriticError),
    #[error("replay: {0}")]
    Replay(#[from] crate::replay::ReplayError),
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error("non-finite {what} at learner step {step}")]
    NonFinite { step: u64, what: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
