//! Resumable training checkpoints.
//!
//! Layout: magic, the resolved config echo, loop counters, the ChaCha stream
//! states of the environment/actor/learner, Lagrange multipliers, both Adam
//! states, the three network blocks, then the replay buffer snapshot.
//! Checkpoints are written at episode boundaries, so no mid-episode
//! environment state is stored.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{AdamState, Network};
use crate::env::RngState;
use crate::mpo::LagrangeState;
use crate::replay::ReplayBuffer;

use super::HarnessError;

const MAGIC: &[u8; 8] = b"HMPOCKP1";

#[derive(Debug)]
pub struct Checkpoint {
    pub config_text: String,
    pub env_steps: u64,
    pub episodes: u64,
    pub learner_steps: u64,
    pub learner_accum: f64,
    pub eval_round: u64,
    pub env_rng: RngState,
    pub act_rng: RngState,
    pub learner_rng: RngState,
    pub lagrange: LagrangeState,
    pub policy_adam: AdamState,
    pub q_adam: AdamState,
    pub policy: Network,
    pub q: Network,
    pub q_target: Network,
    pub replay: ReplayBuffer,
}

#[allow(clippy::too_many_arguments)]
pub struct CheckpointRefs<'a> {
    pub config_text: &'a str,
    pub env_steps: u64,
    pub episodes: u64,
    pub learner_steps: u64,
    pub learner_accum: f64,
    pub eval_round: u64,
    pub env_rng: RngState,
    pub act_rng: RngState,
    pub learner_rng: RngState,
    pub lagrange: &'a LagrangeState,
    pub policy_adam: &'a AdamState,
    pub q_adam: &'a AdamState,
    pub policy: &'a Network,
    pub q: &'a Network,
    pub q_target: &'a Network,
    pub replay: &'a ReplayBuffer,
}

fn write_rng(w: &mut impl Write, state: &RngState) -> std::io::Result<()> {
    w.write_all(&state.seed)?;
    w.write_all(&state.word_pos.to_le_bytes())?;
    w.write_all(&state.stream.to_le_bytes())
}

fn read_rng(r: &mut impl Read) -> std::io::Result<RngState> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let mut wp = [0u8; 16];
    r.read_exact(&mut wp)?;
    let mut st = [0u8; 8];
    r.read_exact(&mut st)?;
    Ok(RngState {
        seed,
        word_pos: u128::from_le_bytes(wp),
        stream: u64::from_le_bytes(st),
    })
}

fn write_adam(w: &mut impl Write, state: &AdamState) -> std::io::Result<()> {
    for v in [
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.epsilon,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&state.step_count().to_le_bytes())?;
    let (m, v) = state.moments();
    w.write_all(&(m.len() as u64).to_le_bytes())?;
    for &x in m.iter().chain(v.iter()) {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_adam(r: &mut impl Read) -> std::io::Result<AdamState> {
    let mut f = [0u8; 8];
    let mut next = |r: &mut dyn Read| -> std::io::Result<f64> {
        r.read_exact(&mut f)?;
        Ok(f64::from_le_bytes(f))
    };
    let lr = next(r)?;
    let beta1 = next(r)?;
    let beta2 = next(r)?;
    let epsilon = next(r)?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let step_count = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let read_vec = |r: &mut dyn Read| -> std::io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    };
    let m = read_vec(r)?;
    let v = read_vec(r)?;
    let mut state = AdamState::new(len, lr);
    state.beta1 = beta1;
    state.beta2 = beta2;
    state.epsilon = epsilon;
    state.restore(m, v, step_count);
    Ok(state)
}

pub fn save_checkpoint(path: &Path, refs: CheckpointRefs<'_>) -> Result<(), HarnessError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    let cfg_bytes = refs.config_text.as_bytes();
    w.write_all(&(cfg_bytes.len() as u64).to_le_bytes())?;
    w.write_all(cfg_bytes)?;
    for v in [
        refs.env_steps,
        refs.episodes,
        refs.learner_steps,
        refs.eval_round,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&refs.learner_accum.to_le_bytes())?;
    write_rng(&mut w, &refs.env_rng)?;
    write_rng(&mut w, &refs.act_rng)?;
    write_rng(&mut w, &refs.learner_rng)?;
    for v in [refs.lagrange.eta_c, refs.lagrange.eta_d, refs.lagrange.learning_rate] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_adam(&mut w, refs.policy_adam)?;
    write_adam(&mut w, refs.q_adam)?;
    refs.policy.write_to(&mut w)?;
    refs.q.write_to(&mut w)?;
    refs.q_target.write_to(&mut w)?;
    refs.replay
        .write_snapshot(&mut w)
        .map_err(HarnessError::Replay)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(HarnessError::Incompatible("bad checkpoint magic".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut cfg_bytes = vec![0u8; len];
    r.read_exact(&mut cfg_bytes)?;
    let config_text = String::from_utf8(cfg_bytes)
        .map_err(|_| HarnessError::Incompatible("config echo is not UTF-8".into()))?;
    let next_u64 = |r: &mut dyn Read| -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let env_steps = next_u64(&mut r)?;
    let episodes = next_u64(&mut r)?;
    let learner_steps = next_u64(&mut r)?;
    let eval_round = next_u64(&mut r)?;
    r.read_exact(&mut b8)?;
    let learner_accum = f64::from_le_bytes(b8);
    let env_rng = read_rng(&mut r)?;
    let act_rng = read_rng(&mut r)?;
    let learner_rng = read_rng(&mut r)?;
    let next_f64 = |r: &mut dyn Read| -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let lagrange = LagrangeState {
        eta_c: next_f64(&mut r)?,
        eta_d: next_f64(&mut r)?,
        learning_rate: next_f64(&mut r)?,
    };
    let policy_adam = read_adam(&mut r)?;
    let q_adam = read_adam(&mut r)?;
    let policy = Network::read_from(&mut r)?;
    let q = Network::read_from(&mut r)?;
    let q_target = Network::read_from(&mut r)?;
    let replay = ReplayBuffer::read_snapshot(&mut r).map_err(HarnessError::Replay)?;
    Ok(Checkpoint {
        config_text,
        env_steps,
        episodes,
        learner_steps,
        learner_accum,
        eval_round,
        env_rng,
        act_rng,
        learner_rng,
        lagrange,
        policy_adam,
        q_adam,
        policy,
        q,
        q_target,
        replay,
    })
}
