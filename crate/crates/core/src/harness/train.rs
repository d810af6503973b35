//! Single-actor acting/learning loop.
//!
//! One environment step per iteration; completed N-step windows go to the
//! replay buffer; learner steps run at a configured fractional ratio once
//! the buffer passes warm-up. A learner step is one Retrace/Q update, a
//! target refresh on its period, and one policy improvement round.
//! Everything is driven by named ChaCha streams, so a fixed seed yields
//! bit-identical logs and checkpoints in this single-threaded loop.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{adam_step, copy_into_target};
use crate::critic::{q_loss, retrace_targets, ExpectationKind};
use crate::env::{Environment, RngState};
use crate::mpo::{improvement_step, ImprovementConfig};
use crate::policy;
use crate::replay::{ReplayBuffer, SequenceTransition};

use super::agent::{agent_factory, build_env, derive_seed, MpoAgent};
use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointRefs};
use super::config::ExperimentConfig;
use super::eval::evaluate_policy;
use super::runlog::{
    write_episode_csv, write_eval_csv, write_learner_jsonl, EpisodeRecord, EvalRecord,
    LearnerRecord, RunLog,
};
use super::HarnessError;

const ENV_SEED_TAG: u64 = 0x01;
const ACT_SEED_TAG: u64 = 0x02;
const LEARNER_SEED_TAG: u64 = 0x03;
const EVAL_SEED_TAG: u64 = 0x1000;

pub struct TrainOutcome {
    pub log: RunLog,
    pub final_checkpoint: PathBuf,
}

struct TrainState {
    env: Box<dyn Environment>,
    agent: MpoAgent,
    replay: ReplayBuffer,
    rng_act: ChaCha12Rng,
    rng_learner: ChaCha12Rng,
    env_steps: u64,
    episodes: u64,
    learner_steps: u64,
    learner_accum: f64,
    eval_round: u64,
    log: RunLog,
    // Current episode.
    observation: Vec<f64>,
    ep_states: Vec<Vec<f64>>,
    ep_actions: Vec<crate::space::HybridAction>,
    ep_rewards: Vec<f64>,
    ep_log_probs: Vec<f64>,
    ep_terminals: Vec<bool>,
    ep_return: f64,
    needs_reset: bool,
}

impl TrainState {
    fn fresh(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let env = build_env(cfg, derive_seed(cfg.run.seed, ENV_SEED_TAG))?;
        let agent = agent_factory(cfg, env.as_ref())?;
        let replay = ReplayBuffer::new(
            cfg.retrace.sequence_length,
            cfg.replay.capacity,
            cfg.replay.max_use,
        );
        Ok(Self {
            env,
            agent,
            replay,
            rng_act: ChaCha12Rng::seed_from_u64(derive_seed(cfg.run.seed, ACT_SEED_TAG)),
            rng_learner: ChaCha12Rng::seed_from_u64(derive_seed(cfg.run.seed, LEARNER_SEED_TAG)),
            env_steps: 0,
            episodes: 0,
            learner_steps: 0,
            learner_accum: 0.0,
            eval_round: 0,
            log: RunLog::default(),
            observation: Vec::new(),
            ep_states: Vec::new(),
            ep_actions: Vec::new(),
            ep_rewards: Vec::new(),
            ep_log_probs: Vec::new(),
            ep_terminals: Vec::new(),
            ep_return: 0.0,
            needs_reset: true,
        })
    }

    fn from_checkpoint(path: &Path) -> Result<(ExperimentConfig, Self), HarnessError> {
        let ckpt = load_checkpoint(path)?;
        let cfg = ExperimentConfig::from_toml(&ckpt.config_text)?;
        let mut state = Self::fresh(&cfg)?;
        state.env.restore_rng(ckpt.env_rng);
        state.rng_act = ckpt.act_rng.rebuild();
        state.rng_learner = ckpt.learner_rng.rebuild();
        state.env_steps = ckpt.env_steps;
        state.episodes = ckpt.episodes;
        state.learner_steps = ckpt.learner_steps;
        state.learner_accum = ckpt.learner_accum;
        state.eval_round = ckpt.eval_round;
        state.replay = ckpt.replay;
        state.agent.lagrange = ckpt.lagrange;
        state.agent.policy_adam = ckpt.policy_adam;
        state.agent.q_adam = ckpt.q_adam;
        state
            .agent
            .policy
            .params_mut()
            .copy_from_slice(ckpt.policy.params());
        state
            .agent
            .q
            .net_mut()
            .params_mut()
            .copy_from_slice(ckpt.q.params());
        state
            .agent
            .q_target
            .net_mut()
            .params_mut()
            .copy_from_slice(ckpt.q_target.params());
        Ok((cfg, state))
    }

    fn begin_episode(&mut self) {
        self.observation = self.env.reset();
        self.ep_states.clear();
        self.ep_states.push(self.observation.clone());
        self.ep_actions.clear();
        self.ep_rewards.clear();
        self.ep_log_probs.clear();
        self.ep_terminals.clear();
        self.ep_return = 0.0;
        self.needs_reset = false;
    }

    fn learner_step(&mut self, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
        let batch = self
            .replay
            .sample_batch(cfg.training.batch_size, &mut self.rng_learner)?;

        let agent = &mut self.agent;
        let policy_net = &agent.policy;
        let space = &agent.space;
        let targets = retrace_targets(
            &batch,
            &|obs: &[f64]| policy::policy_params(policy_net, obs, space),
            &agent.q_target,
            space,
            cfg.retrace.gamma,
            ExpectationKind::MonteCarlo {
                samples: cfg.retrace.expectation_samples,
            },
            &mut self.rng_learner,
        )?;
        let graph = q_loss(&batch, &targets, &agent.q)?;
        if !graph.loss.is_finite() {
            return Err(HarnessError::NonFinite {
                step: self.learner_steps,
                what: "q loss".into(),
            });
        }
        let grads = agent.q.net().backward_scalar(&graph.tape, graph.node)?;
        adam_step(agent.q.net_mut().params_mut(), &grads, &mut agent.q_adam)?;
        self.learner_steps += 1;
        if self.learner_steps % cfg.training.target_update_period == 0 {
            let (q, q_target) = (&agent.q, &mut agent.q_target);
            copy_into_target(q.net(), q_target.net_mut())?;
        }

        let states: Vec<Vec<f64>> = batch.iter().map(|s| s.states[0].clone()).collect();
        let impro_cfg = ImprovementConfig {
            epsilon: cfg.mpo.epsilon,
            epsilon_c: cfg.mpo.epsilon_c,
            epsilon_d: cfg.mpo.epsilon_d,
            samples_per_state: cfg.mpo.samples_per_state,
            mstep_steps: cfg.mpo.mstep_steps,
            max_extra_steps: 50,
        };
        let stats = improvement_step(
            &mut agent.policy,
            &mut agent.policy_adam,
            &agent.q,
            &agent.space,
            &states,
            &mut agent.lagrange,
            &impro_cfg,
            &mut self.rng_learner,
        )?;
        self.log.learner.push(LearnerRecord {
            step: self.learner_steps,
            q_loss: graph.loss,
            eta: stats.temperature,
            kl_c: stats.t_c,
            kl_d: stats.t_d,
            eta_c: stats.eta_c,
            eta_d: stats.eta_d,
        });
        Ok(())
    }

    fn run_periodic_eval(&mut self, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
        let seed = derive_seed(cfg.run.seed, EVAL_SEED_TAG + self.eval_round);
        let mut eval_env = build_env(cfg, seed)?;
        let summary = evaluate_policy(
            &self.agent.policy,
            &self.agent.space,
            eval_env.as_mut(),
            cfg.evaluation.episodes,
        )?;
        self.log.evals.push(EvalRecord {
            env_step: self.env_steps,
            episodes: cfg.evaluation.episodes as u64,
            mean_return: summary.mean_return,
            std_return: summary.std_return,
            successes: summary.successes,
            early_terminations: summary.early_terminations,
        });
        self.eval_round += 1;
        Ok(())
    }

    fn save(&self, cfg: &ExperimentConfig, path: &Path) -> Result<(), HarnessError> {
        save_checkpoint(
            path,
            CheckpointRefs {
                config_text: &cfg.to_toml(),
                env_steps: self.env_steps,
                episodes: self.episodes,
                learner_steps: self.learner_steps,
                learner_accum: self.learner_accum,
                eval_round: self.eval_round,
                env_rng: self.env.rng_state(),
                act_rng: RngState::capture(&self.rng_act),
                learner_rng: RngState::capture(&self.rng_learner),
                lagrange: &self.agent.lagrange,
                policy_adam: &self.agent.policy_adam,
                q_adam: &self.agent.q_adam,
                policy: &self.agent.policy,
                q: self.agent.q.net(),
                q_target: self.agent.q_target.net(),
                replay: &self.replay,
            },
        )
    }
}

fn train_loop(
    cfg: &ExperimentConfig,
    state: &mut TrainState,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    let n = cfg.retrace.sequence_length;
    let warmup = cfg.replay.warmup_batches * cfg.training.batch_size;
    while state.env_steps < cfg.run.total_env_steps {
        if state.needs_reset {
            state.begin_episode();
        }
        let params = policy::policy_params(&state.agent.policy, &state.observation, &state.agent.space);
        let action = policy::sample(&params, &state.agent.space, &mut state.rng_act);
        let log_prob = policy::log_prob(&params, &state.agent.space, &action);
        let step = state.env.step(&action)?;
        state.ep_actions.push(action);
        state.ep_rewards.push(step.reward);
        state.ep_log_probs.push(log_prob);
        state.ep_terminals.push(step.terminal);
        state.ep_states.push(step.observation.clone());
        state.observation = step.observation;
        state.ep_return += step.reward;
        state.env_steps += 1;

        if state.ep_actions.len() >= n {
            let start = state.ep_actions.len() - n;
            state.replay.append(SequenceTransition {
                states: state.ep_states[start..].to_vec(),
                actions: state.ep_actions[start..].to_vec(),
                rewards: state.ep_rewards[start..].to_vec(),
                behavior_log_probs: state.ep_log_probs[start..].to_vec(),
                terminals: state.ep_terminals[start..].to_vec(),
            })?;
        }

        if state.replay.len() >= warmup.max(cfg.training.batch_size) {
            state.learner_accum += cfg.training.learner_steps_per_env_step;
            while state.learner_accum >= 1.0 {
                state.learner_accum -= 1.0;
                state.learner_step(cfg)?;
            }
        }

        if state.env_steps % cfg.evaluation.period_env_steps == 0 {
            state.run_periodic_eval(cfg)?;
        }

        if step.done {
            state.episodes += 1;
            state.log.episodes.push(EpisodeRecord {
                episode: state.episodes - 1,
                env_steps: state.env_steps,
                episode_return: state.ep_return,
                length: state.ep_actions.len() as u64,
                termination: if step.terminal { "terminal" } else { "limit" }.to_string(),
            });
            state.needs_reset = true;
            let period = cfg.training.checkpoint_period_episodes;
            if period > 0 && state.episodes % period == 0 {
                state.save(cfg, &out_dir.join(format!("ckpt_ep{}.bin", state.episodes)))?;
            }
        }
    }
    Ok(())
}

fn finish(
    cfg: &ExperimentConfig,
    state: &TrainState,
    out_dir: &Path,
) -> Result<TrainOutcome, HarnessError> {
    write_episode_csv(&state.log, &out_dir.join("episodes.csv"))?;
    write_learner_jsonl(&state.log, &out_dir.join("learner.jsonl"))?;
    write_eval_csv(&state.log, &out_dir.join("eval.csv"))?;
    let final_path = out_dir.join("final.bin");
    state.save(cfg, &final_path)?;
    Ok(TrainOutcome {
        log: state.log.clone(),
        final_checkpoint: final_path,
    })
}

/// Runs a full training job: echoes the config into the output directory,
/// trains to the configured step budget, writes logs and the final
/// checkpoint.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.run.output_dir);
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    let mut state = TrainState::fresh(cfg)?;
    train_loop(cfg, &mut state, &out_dir)?;
    finish(cfg, &state, &out_dir)
}

/// Continues a checkpointed run. Logs written under `output_dir` cover only
/// the resumed portion; with the same seed schedule they match the tail of
/// an uninterrupted run record for record.
pub fn resume_training(
    checkpoint: &Path,
    output_dir: &Path,
) -> Result<TrainOutcome, HarnessError> {
    let (cfg, mut state) = TrainState::from_checkpoint(checkpoint)?;
    std::fs::create_dir_all(output_dir)?;
    train_loop(&cfg, &mut state, output_dir)?;
    finish(&cfg, &state, output_dir)
}
