//! Deterministic policy evaluation: continuous dimensions drive the Gaussian
//! mean, discrete dimensions the categorical argmax (ties to the lowest
//! index). Reports return statistics, success and early-termination tallies,
//! and per-step discrete-action traces for mode-selection plots.

use std::path::Path;

use crate::autodiff::Network;
use crate::env::Environment;
use crate::policy;
use crate::space::ActionSpace;

use super::agent::{build_env, derive_seed};
use super::checkpoint::load_checkpoint;
use super::config::ExperimentConfig;
use super::HarnessError;

/// An episode counts as a success when some step reached at least this
/// fraction of the unit reward ceiling.
pub const SUCCESS_REWARD: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub std_return: f64,
    pub successes: u64,
    pub early_terminations: u64,
    /// Per episode, per step: the discrete part of the applied action.
    pub mode_traces: Vec<Vec<Vec<usize>>>,
}

pub fn evaluate_policy(
    policy_net: &Network,
    space: &ActionSpace,
    env: &mut dyn Environment,
    episodes: usize,
) -> Result<EvalSummary, HarnessError> {
    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0;
    let mut early_terminations = 0;
    let mut mode_traces = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut total = 0.0;
        let mut best_step = f64::NEG_INFINITY;
        let mut trace = Vec::new();
        loop {
            let params = policy::policy_params(policy_net, &obs, space);
            let action = policy::mean_action(&params, space);
            trace.push(action.discrete.clone());
            let step = env.step(&action)?;
            total += step.reward;
            best_step = best_step.max(step.reward);
            obs = step.observation;
            if step.done {
                if step.terminal {
                    early_terminations += 1;
                }
                break;
            }
        }
        if best_step >= SUCCESS_REWARD {
            successes += 1;
        }
        returns.push(total);
        mode_traces.push(trace);
    }
    let n = returns.len() as f64;
    let mean_return = returns.iter().sum::<f64>() / n;
    let var = returns
        .iter()
        .map(|r| (r - mean_return) * (r - mean_return))
        .sum::<f64>()
        / n;
    Ok(EvalSummary {
        returns,
        mean_return,
        std_return: var.sqrt(),
        successes,
        early_terminations,
        mode_traces,
    })
}

/// Loads a checkpointed policy and evaluates it for `episodes` episodes.
/// `env_spec` optionally overrides the checkpoint's environment stack with
/// `"id+wrapper+wrapper"` syntax; the override must produce the action space
/// the policy was trained on.
pub fn run_eval(
    checkpoint: &Path,
    env_spec: Option<&str>,
    episodes: usize,
    eval_seed: u64,
) -> Result<EvalSummary, HarnessError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut cfg = ExperimentConfig::from_toml(&ckpt.config_text)?;
    if let Some(spec) = env_spec {
        let mut parts = spec.split('+');
        cfg.env.id = parts.next().unwrap_or_default().to_string();
        cfg.env.wrappers = parts.map(str::to_string).collect();
        cfg.validate()?;
    }
    let mut env = build_env(&cfg, derive_seed(eval_seed, 0xEE))?;
    // The policy head layout pins the action space it was trained for.
    let expected_heads = env.action_space().head_len();
    if ckpt.policy.output_dim() != expected_heads
        || ckpt.policy.input_dim() != env.observation_dim()
    {
        return Err(HarnessError::Incompatible(format!(
            "checkpoint policy ({} -> {}) does not match environment ({} -> {})",
            ckpt.policy.input_dim(),
            ckpt.policy.output_dim(),
            env.observation_dim(),
            expected_heads,
        )));
    }
    let space = env.action_space().clone();
    evaluate_policy(&ckpt.policy, &space, env.as_mut(), episodes)
}
