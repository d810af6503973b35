//! Experiment configuration: strict key = value sections with two built-in
//! hyperparameter profiles.
//!
//! `paper` carries the published defaults (nets 200-200-200 / 500-500-500,
//! batch 3072, buffer 2e6, and the epsilon/discount/learning-rate table);
//! `desk` shrinks networks, batch, and buffer to laptop scale. Any key given
//! explicitly overrides its profile default, unknown keys are rejected, and
//! the fully resolved configuration is echoed into the output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse: {0}")]
    Parse(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    ContinuousMpo,
    HybridMpo,
    ArgmaxMpo,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::ContinuousMpo => "continuous_mpo",
            AgentKind::HybridMpo => "hybrid_mpo",
            AgentKind::ArgmaxMpo => "argmax_mpo",
        }
    }
}

/// Fully resolved run description. Serializing it yields the config echo;
/// parsing the echo reproduces it field for field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub agent: AgentSection,
    pub env: EnvSection,
    pub networks: NetworksSection,
    pub mpo: MpoSection,
    pub retrace: RetraceSection,
    pub replay: ReplaySection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: String,
    pub total_env_steps: u64,
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSection {
    pub kind: AgentKind,
    /// Initial probability mass placed on the repeat category of an
    /// act-or-repeat dimension; 0 disables the bias.
    pub repeat_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvSection {
    pub id: String,
    /// Ordered wrapper stack, e.g. `["discretize:3", "act_or_repeat"]`.
    pub wrappers: Vec<String>,
    /// 0 keeps the environment's own episode limit.
    pub episode_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworksSection {
    pub policy_hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub first_layer_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpoSection {
    pub epsilon: f64,
    pub epsilon_c: f64,
    pub epsilon_d: f64,
    pub samples_per_state: usize,
    pub mstep_steps: usize,
    pub multiplier_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetraceSection {
    pub gamma: f64,
    pub sequence_length: usize,
    pub expectation_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplaySection {
    /// Capacity in stored sequences (one overlapping window per step).
    pub capacity: usize,
    pub max_use: u32,
    pub warmup_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub target_update_period: u64,
    pub learner_steps_per_env_step: f64,
    pub checkpoint_period_episodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSection {
    pub period_env_steps: u64,
    pub episodes: usize,
}

// ---- partial (all-optional) mirror used for parsing ----

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    run: RawRun,
    #[serde(default)]
    agent: RawAgent,
    env: RawEnv,
    #[serde(default)]
    networks: RawNetworks,
    #[serde(default)]
    mpo: RawMpo,
    #[serde(default)]
    retrace: RawRetrace,
    #[serde(default)]
    replay: RawReplay,
    #[serde(default)]
    training: RawTraining,
    #[serde(default)]
    evaluation: RawEvaluation,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: Option<u64>,
    output_dir: Option<String>,
    total_env_steps: Option<u64>,
    profile: Option<Profile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    kind: Option<AgentKind>,
    repeat_bias: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    id: Option<String>,
    wrappers: Option<Vec<String>>,
    episode_limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetworks {
    policy_hidden: Option<Vec<usize>>,
    q_hidden: Option<Vec<usize>>,
    first_layer_norm: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMpo {
    epsilon: Option<f64>,
    epsilon_c: Option<f64>,
    epsilon_d: Option<f64>,
    samples_per_state: Option<usize>,
    mstep_steps: Option<usize>,
    multiplier_lr: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRetrace {
    gamma: Option<f64>,
    sequence_length: Option<usize>,
    expectation_samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReplay {
    capacity: Option<usize>,
    max_use: Option<u32>,
    warmup_batches: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    target_update_period: Option<u64>,
    learner_steps_per_env_step: Option<f64>,
    checkpoint_period_episodes: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvaluation {
    period_env_steps: Option<u64>,
    episodes: Option<usize>,
}

struct ProfileDefaults {
    policy_hidden: &'static [usize],
    q_hidden: &'static [usize],
    batch_size: usize,
    capacity: usize,
    learner_steps_per_env_step: f64,
    mstep_steps: usize,
    eval_period: u64,
    epsilon_c: f64,
    epsilon_d: f64,
}

impl Profile {
    fn defaults(self) -> ProfileDefaults {
        match self {
            Profile::Paper => ProfileDefaults {
                policy_hidden: &[200, 200, 200],
                q_hidden: &[500, 500, 500],
                batch_size: 3072,
                capacity: 2_000_000,
                learner_steps_per_env_step: 1.0,
                mstep_steps: 5,
                eval_period: 10_000,
                epsilon_c: 1e-3,
                epsilon_d: 1e-4,
            },
            Profile::Desk => ProfileDefaults {
                policy_hidden: &[48, 48],
                q_hidden: &[48, 48],
                batch_size: 64,
                capacity: 50_000,
                learner_steps_per_env_step: 0.25,
                mstep_steps: 4,
                eval_period: 2_500,
                // KL bounds scaled to the per-round movement the desk-scale
                // optimizer actually produces.
                epsilon_c: 1e-2,
                epsilon_d: 1e-3,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Minimal configuration for an environment id, on the desk profile.
    pub fn desk(env_id: &str, kind: AgentKind, seed: u64, total_env_steps: u64) -> Self {
        let raw = RawConfig {
            run: RawRun {
                seed: Some(seed),
                total_env_steps: Some(total_env_steps),
                ..RawRun::default()
            },
            agent: RawAgent {
                kind: Some(kind),
                ..RawAgent::default()
            },
            env: RawEnv {
                id: Some(env_id.to_string()),
                ..RawEnv::default()
            },
            ..RawConfig::default()
        };
        Self::resolve(raw).expect("static defaults are valid")
    }

    fn resolve(raw: RawConfig) -> Result<Self, ConfigError> {
        let profile = raw.run.profile.unwrap_or(Profile::Desk);
        let d = profile.defaults();
        let cfg = ExperimentConfig {
            run: RunSection {
                seed: raw.run.seed.unwrap_or(0),
                output_dir: raw.run.output_dir.unwrap_or_else(|| "runs/out".into()),
                total_env_steps: raw.run.total_env_steps.unwrap_or(50_000),
                profile,
            },
            agent: AgentSection {
                kind: raw.agent.kind.unwrap_or(AgentKind::HybridMpo),
                repeat_bias: raw.agent.repeat_bias.unwrap_or(0.0),
            },
            env: EnvSection {
                id: raw.env.id.ok_or(ConfigError::Invalid {
                    key: "env.id",
                    reason: "missing".into(),
                })?,
                wrappers: raw.env.wrappers.unwrap_or_default(),
                episode_limit: raw.env.episode_limit.unwrap_or(0),
            },
            networks: NetworksSection {
                policy_hidden: raw
                    .networks
                    .policy_hidden
                    .unwrap_or_else(|| d.policy_hidden.to_vec()),
                q_hidden: raw.networks.q_hidden.unwrap_or_else(|| d.q_hidden.to_vec()),
                first_layer_norm: raw.networks.first_layer_norm.unwrap_or(true),
            },
            mpo: MpoSection {
                epsilon: raw.mpo.epsilon.unwrap_or(0.1),
                epsilon_c: raw.mpo.epsilon_c.unwrap_or(d.epsilon_c),
                epsilon_d: raw.mpo.epsilon_d.unwrap_or(d.epsilon_d),
                samples_per_state: raw.mpo.samples_per_state.unwrap_or(20),
                mstep_steps: raw.mpo.mstep_steps.unwrap_or(d.mstep_steps),
                multiplier_lr: raw.mpo.multiplier_lr.unwrap_or(1.0),
            },
            retrace: RetraceSection {
                gamma: raw.retrace.gamma.unwrap_or(0.99),
                sequence_length: raw.retrace.sequence_length.unwrap_or(8),
                expectation_samples: raw.retrace.expectation_samples.unwrap_or(20),
            },
            replay: ReplaySection {
                capacity: raw.replay.capacity.unwrap_or(d.capacity),
                max_use: raw.replay.max_use.unwrap_or(500),
                warmup_batches: raw.replay.warmup_batches.unwrap_or(10),
            },
            training: TrainingSection {
                batch_size: raw.training.batch_size.unwrap_or(d.batch_size),
                learning_rate: raw.training.learning_rate.unwrap_or(3e-4),
                target_update_period: raw.training.target_update_period.unwrap_or(250),
                learner_steps_per_env_step: raw
                    .training
                    .learner_steps_per_env_step
                    .unwrap_or(d.learner_steps_per_env_step),
                checkpoint_period_episodes: raw.training.checkpoint_period_episodes.unwrap_or(0),
            },
            evaluation: EvaluationSection {
                period_env_steps: raw.evaluation.period_env_steps.unwrap_or(d.eval_period),
                episodes: raw.evaluation.episodes.unwrap_or(3),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(key: &'static str, reason: impl Into<String>) -> ConfigError {
            ConfigError::Invalid {
                key,
                reason: reason.into(),
            }
        }
        if self.run.total_env_steps == 0 {
            return Err(bad("run.total_env_steps", "must be positive"));
        }
        for w in &self.env.wrappers {
            parse_wrapper(w)?;
        }
        if self.networks.policy_hidden.is_empty() || self.networks.q_hidden.is_empty() {
            return Err(bad("networks", "hidden layer lists must be non-empty"));
        }
        if self.networks.policy_hidden.iter().any(|&s| s == 0)
            || self.networks.q_hidden.iter().any(|&s| s == 0)
        {
            return Err(bad("networks", "zero-width layers are not allowed"));
        }
        if !(self.mpo.epsilon > 0.0 && self.mpo.epsilon_c > 0.0 && self.mpo.epsilon_d > 0.0) {
            return Err(bad("mpo", "epsilon bounds must be positive"));
        }
        if self.mpo.samples_per_state == 0 || self.mpo.mstep_steps == 0 {
            return Err(bad("mpo", "sample and step counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.retrace.gamma) {
            return Err(bad("retrace.gamma", "must lie in [0, 1)"));
        }
        if self.retrace.sequence_length == 0 || self.retrace.expectation_samples == 0 {
            return Err(bad("retrace", "lengths and sample counts must be positive"));
        }
        if self.replay.capacity == 0 || self.replay.max_use == 0 {
            return Err(bad("replay", "capacity and max_use must be positive"));
        }
        if self.training.batch_size == 0 {
            return Err(bad("training.batch_size", "must be positive"));
        }
        if !(self.training.learning_rate > 0.0) {
            return Err(bad("training.learning_rate", "must be positive"));
        }
        if self.training.target_update_period == 0 {
            return Err(bad("training.target_update_period", "must be positive"));
        }
        if self.training.learner_steps_per_env_step < 0.0 {
            return Err(bad("training.learner_steps_per_env_step", "must be >= 0"));
        }
        if !(self.agent.repeat_bias == 0.0 || (0.0..1.0).contains(&self.agent.repeat_bias)) {
            return Err(bad("agent.repeat_bias", "must be 0 or in (0, 1)"));
        }
        if self.agent.repeat_bias > 0.0
            && !self
                .env
                .wrappers
                .iter()
                .any(|w| w.trim() == "act_or_repeat")
        {
            return Err(bad(
                "agent.repeat_bias",
                "requires the act_or_repeat wrapper in env.wrappers",
            ));
        }
        if self.evaluation.episodes == 0 || self.evaluation.period_env_steps == 0 {
            return Err(bad("evaluation", "period and episode count must be positive"));
        }
        Ok(())
    }

    /// The full resolved configuration as TOML. Reparsing it reproduces
    /// `self` exactly, independent of profile defaults.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A parsed wrapper stack entry.
#[derive(Debug, Clone, PartialEq)]
pub enum WrapperSpec {
    Discretize { bins: usize },
    ArgmaxTrick,
    ActOrRepeat,
    ActionAttention,
    FixDiscrete { dim: usize, value: usize },
}

pub fn parse_wrapper(text: &str) -> Result<WrapperSpec, ConfigError> {
    let parts: Vec<&str> = text.trim().split(':').collect();
    let bad = |reason: String| ConfigError::Invalid {
        key: "env.wrappers",
        reason,
    };
    match parts.as_slice() {
        ["discretize", bins] => {
            let bins: usize = bins
                .parse()
                .map_err(|_| bad(format!("bad bin count in {text:?}")))?;
            if bins < 2 {
                return Err(bad("discretize needs at least 2 bins".into()));
            }
            Ok(WrapperSpec::Discretize { bins })
        }
        ["argmax_trick"] => Ok(WrapperSpec::ArgmaxTrick),
        ["act_or_repeat"] => Ok(WrapperSpec::ActOrRepeat),
        ["action_attention"] => Ok(WrapperSpec::ActionAttention),
        ["fix_discrete", dim, value] => {
            let dim = dim
                .parse()
                .map_err(|_| bad(format!("bad dimension in {text:?}")))?;
            let value = value
                .parse()
                .map_err(|_| bad(format!("bad category in {text:?}")))?;
            Ok(WrapperSpec::FixDiscrete { dim, value })
        }
        _ => Err(bad(format!("unknown wrapper {text:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [run]
        seed = 3
        [env]
        id = "pendulum"
    "#;

    #[test]
    fn minimal_config_resolves_with_desk_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.run.seed, 3);
        assert_eq!(cfg.run.profile, Profile::Desk);
        assert_eq!(cfg.mpo.epsilon, 0.1);
        assert_eq!(cfg.mpo.epsilon_c, 1e-2);
        assert_eq!(cfg.mpo.epsilon_d, 1e-3);
        assert_eq!(cfg.retrace.gamma, 0.99);
        assert_eq!(cfg.training.learning_rate, 3e-4);
        assert_eq!(cfg.training.target_update_period, 250);
        assert_eq!(cfg.replay.max_use, 500);
        assert_eq!(cfg.mpo.samples_per_state, 20);
    }

    #[test]
    fn paper_profile_uses_published_scales() {
        let text = r#"
            [run]
            profile = "paper"
            [env]
            id = "pendulum"
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.networks.policy_hidden, vec![200, 200, 200]);
        assert_eq!(cfg.networks.q_hidden, vec![500, 500, 500]);
        assert_eq!(cfg.training.batch_size, 3072);
        assert_eq!(cfg.replay.capacity, 2_000_000);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = r#"
            [run]
            seed = 1
            bogus_knob = 5
            [env]
            id = "pendulum"
        "#;
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("bogus_knob"), "{err}");
    }

    #[test]
    fn explicit_values_override_profile_defaults() {
        let text = r#"
            [run]
            profile = "paper"
            [env]
            id = "peg"
            [training]
            batch_size = 111
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.training.batch_size, 111);
        assert_eq!(cfg.networks.q_hidden, vec![500, 500, 500]);
    }

    #[test]
    fn echo_round_trips_exactly() {
        let text = r#"
            [run]
            seed = 9
            profile = "desk"
            [agent]
            kind = "argmax_mpo"
            [env]
            id = "pendulum"
            wrappers = ["discretize:17"]
            [mpo]
            epsilon = 0.2
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let echo = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&echo).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn wrapper_strings_parse_and_validate() {
        assert_eq!(
            parse_wrapper("discretize:3").unwrap(),
            WrapperSpec::Discretize { bins: 3 }
        );
        assert_eq!(parse_wrapper("act_or_repeat").unwrap(), WrapperSpec::ActOrRepeat);
        assert_eq!(
            parse_wrapper("fix_discrete:0:1").unwrap(),
            WrapperSpec::FixDiscrete { dim: 0, value: 1 }
        );
        assert!(parse_wrapper("discretize:1").is_err());
        assert!(parse_wrapper("warp_drive").is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.retrace.gamma = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.agent.repeat_bias = 0.95;
        assert!(cfg.validate().is_err(), "bias without act_or_repeat");
        cfg.env.wrappers = vec!["act_or_repeat".into()];
        assert!(cfg.validate().is_ok());
    }
}
