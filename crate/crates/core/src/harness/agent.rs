//! Environment stack construction and agent assembly.

use crate::autodiff::{build_network, copy_into_target, AdamState, Activation, Network};
use crate::critic::QFunction;
use crate::env::{
    ActOrRepeatWrapper, ActionAttentionWrapper, ArgmaxTrickWrapper, CartpoleEnv, CartpoleParams,
    DiscretizeWrapper, Environment, FixDiscreteWrapper, FurutaEnv, FurutaMode, FurutaParams,
    PegEnv, PegParams, PendulumEnv, PendulumParams,
};
use crate::mpo::LagrangeState;
use crate::policy::bias_discrete_head;
use crate::space::ActionSpace;

use super::config::{parse_wrapper, AgentKind, ConfigError, ExperimentConfig, WrapperSpec};
use super::HarnessError;

/// Splitmix-style stream derivation so every consumer of the run seed gets an
/// independent, reproducible stream.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn base_env(cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn Environment>, HarnessError> {
    let limit = cfg.env.episode_limit;
    let with_limit = |default: usize| if limit > 0 { limit } else { default };
    let env: Box<dyn Environment> = match cfg.env.id.as_str() {
        "pendulum" => {
            let mut p = PendulumParams::default();
            p.episode_limit = with_limit(p.episode_limit);
            Box::new(PendulumEnv::new(p, seed))
        }
        "cartpole" => {
            let mut p = CartpoleParams::default();
            p.episode_limit = with_limit(p.episode_limit);
            Box::new(CartpoleEnv::new(p, seed))
        }
        "furuta_sparse_back" | "furuta_sparse_front" | "furuta_shaped" => {
            let mode = match cfg.env.id.as_str() {
                "furuta_sparse_back" => FurutaMode::SparseBack,
                "furuta_sparse_front" => FurutaMode::SparseFront,
                _ => FurutaMode::Shaped,
            };
            let mut p = FurutaParams::default();
            p.episode_limit = with_limit(p.episode_limit);
            Box::new(FurutaEnv::new(p, mode, seed))
        }
        "peg" => {
            let mut p = PegParams::default();
            p.episode_limit = with_limit(p.episode_limit);
            Box::new(PegEnv::new(p, seed))
        }
        other => {
            return Err(HarnessError::Config(ConfigError::Invalid {
                key: "env.id",
                reason: format!("unknown environment {other:?}"),
            }))
        }
    };
    Ok(env)
}

/// Builds the base environment and applies the configured wrapper stack in
/// order. The argmax-trick agent kind appends its adapter at the end.
pub fn build_env(cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn Environment>, HarnessError> {
    let mut env = base_env(cfg, seed)?;
    for text in &cfg.env.wrappers {
        env = match parse_wrapper(text).map_err(HarnessError::Config)? {
            WrapperSpec::Discretize { bins } => Box::new(DiscretizeWrapper::new(env, bins)?),
            WrapperSpec::ArgmaxTrick => Box::new(ArgmaxTrickWrapper::new(env)?),
            WrapperSpec::ActOrRepeat => Box::new(ActOrRepeatWrapper::new(env)),
            WrapperSpec::ActionAttention => Box::new(ActionAttentionWrapper::new(env)?),
            WrapperSpec::FixDiscrete { dim, value } => {
                Box::new(FixDiscreteWrapper::new(env, dim, value)?)
            }
        };
    }
    if cfg.agent.kind == AgentKind::ArgmaxMpo {
        env = Box::new(ArgmaxTrickWrapper::new(env)?);
    }
    Ok(env)
}

/// Policy, critic, target critic, their optimizers, and the multipliers.
#[derive(Debug)]
pub struct MpoAgent {
    pub space: ActionSpace,
    pub obs_dim: usize,
    pub policy: Network,
    pub q: QFunction,
    pub q_target: QFunction,
    pub policy_adam: AdamState,
    pub q_adam: AdamState,
    pub lagrange: LagrangeState,
}

/// Builds the agent for the (already wrapped) environment, enforcing the
/// kind/space compatibility rules: the continuous agent rejects hybrid
/// spaces, the hybrid agent accepts anything.
pub fn agent_factory(cfg: &ExperimentConfig, env: &dyn Environment) -> Result<MpoAgent, HarnessError> {
    let space = env.action_space().clone();
    if cfg.agent.kind == AgentKind::ContinuousMpo && !space.is_continuous_only() {
        return Err(HarnessError::Incompatible(format!(
            "{} requires a purely continuous action space, got {} discrete dimension(s)",
            cfg.agent.kind.name(),
            space.n_discrete()
        )));
    }
    let obs_dim = env.observation_dim();

    let mut policy_sizes = vec![obs_dim];
    policy_sizes.extend_from_slice(&cfg.networks.policy_hidden);
    policy_sizes.push(space.head_len());
    let mut policy = build_network(
        &policy_sizes,
        Activation::Elu,
        cfg.networks.first_layer_norm,
        derive_seed(cfg.run.seed, 0x11),
    )?;

    let mut q_sizes = vec![obs_dim + space.encoded_action_len()];
    q_sizes.extend_from_slice(&cfg.networks.q_hidden);
    q_sizes.push(1);
    let q_net = build_network(
        &q_sizes,
        Activation::Elu,
        cfg.networks.first_layer_norm,
        derive_seed(cfg.run.seed, 0x22),
    )?;
    let mut target_net = build_network(
        &q_sizes,
        Activation::Elu,
        cfg.networks.first_layer_norm,
        derive_seed(cfg.run.seed, 0x22),
    )?;
    copy_into_target(&q_net, &mut target_net)?;

    if cfg.agent.repeat_bias > 0.0 {
        // The act-or-repeat flag is the trailing discrete dimension; category
        // 1 means repeat.
        let n_d = space.n_discrete();
        if n_d == 0 {
            return Err(HarnessError::Incompatible(
                "repeat_bias needs a discrete act-or-repeat dimension".into(),
            ));
        }
        bias_discrete_head(&mut policy, &space, n_d - 1, 1, cfg.agent.repeat_bias);
    }

    let policy_adam = AdamState::new(policy.param_count(), cfg.training.learning_rate);
    let q_adam = AdamState::new(q_net.param_count(), cfg.training.learning_rate);
    Ok(MpoAgent {
        obs_dim,
        policy,
        q: QFunction::new(q_net, space.clone()),
        q_target: QFunction::new(target_net, space.clone()),
        policy_adam,
        q_adam,
        lagrange: LagrangeState::new(cfg.mpo.multiplier_lr),
        space,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::AgentKind;

    #[test]
    fn continuous_agent_rejects_hybrid_spaces() {
        let cfg = ExperimentConfig::desk("peg", AgentKind::ContinuousMpo, 0, 1000);
        let env = build_env(&cfg, 1).unwrap();
        assert!(matches!(
            agent_factory(&cfg, env.as_ref()),
            Err(HarnessError::Incompatible(_))
        ));
    }

    #[test]
    fn hybrid_agent_on_continuous_space_degenerates_to_standard_form() {
        let cfg = ExperimentConfig::desk("pendulum", AgentKind::HybridMpo, 0, 1000);
        let env = build_env(&cfg, 1).unwrap();
        let agent = agent_factory(&cfg, env.as_ref()).unwrap();
        assert!(agent.space.is_continuous_only());
        assert_eq!(agent.policy.output_dim(), 2); // mean and stddev head only
    }

    #[test]
    fn argmax_agent_acts_on_expanded_continuous_weights() {
        let mut cfg = ExperimentConfig::desk("pendulum", AgentKind::ArgmaxMpo, 0, 1000);
        cfg.env.wrappers = vec!["discretize:17".into()];
        let env = build_env(&cfg, 1).unwrap();
        assert!(env.action_space().is_continuous_only());
        assert_eq!(env.action_space().n_continuous(), 17);
        let agent = agent_factory(&cfg, env.as_ref()).unwrap();
        assert_eq!(agent.policy.output_dim(), 34);
    }

    #[test]
    fn seed_derivation_separates_streams() {
        let a = derive_seed(7, 0x11);
        let b = derive_seed(7, 0x22);
        let c = derive_seed(8, 0x11);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 0x11));
    }

    #[test]
    fn repeat_bias_lands_on_the_trailing_discrete_dimension() {
        let mut cfg = ExperimentConfig::desk("furuta_sparse_back", AgentKind::HybridMpo, 0, 1000);
        cfg.env.wrappers = vec!["act_or_repeat".into()];
        cfg.agent.repeat_bias = 0.95;
        let env = build_env(&cfg, 1).unwrap();
        let agent = agent_factory(&cfg, env.as_ref()).unwrap();
        let obs = vec![0.0; agent.obs_dim];
        let params = crate::policy::policy_params(&agent.policy, &obs, &agent.space);
        let repeat = params.cat_probs.last().unwrap()[1];
        assert!((repeat - 0.95).abs() < 0.05, "repeat probability {repeat}");
    }
}
