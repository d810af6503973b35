//! Desk-scale simulated control tasks and action-space wrappers.
//!
//! Every environment is deterministic given its construction seed and the
//! action sequence, exposes continuous action dimensions normalized to
//! `[-1, 1]` (scaling to physical units happens inside), and keeps shaped
//! per-step rewards in `[0, 1]`.

mod furuta;
mod peg;
mod pendulum;
mod reward;
mod wrappers;

pub use furuta::{FurutaEnv, FurutaMode, FurutaParams};
pub use peg::{PegEnv, PegParams};
pub use pendulum::{CartpoleEnv, CartpoleParams, PendulumEnv, PendulumParams};
pub use reward::tolerance_reward;
pub use wrappers::{
    ActionAttentionWrapper, ActOrRepeatWrapper, ArgmaxTrickWrapper, DiscretizeWrapper,
    FixDiscreteWrapper,
};

use std::io::{Read, Write};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::space::{ActionSpace, HybridAction, SpaceError};

/// Serializable snapshot of a ChaCha stream, used to checkpoint environment
/// and harness randomness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha12Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn rebuild(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step after episode end without reset")]
    SteppedAfterDone,
    #[error("action does not conform to the action space: {0}")]
    BadAction(#[from] SpaceError),
    #[error("wrapper cannot discretize an already-discrete dimension")]
    AlreadyDiscrete,
    #[error("wrapper needs {0}")]
    WrapperPrecondition(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True MDP termination: bootstrap values must be dropped.
    pub terminal: bool,
    /// Episode over (termination or step limit); reset required.
    pub done: bool,
}

pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> &ActionSpace;
    fn episode_limit(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &HybridAction) -> Result<Step, EnvError>;
    /// Snapshot of the environment's random stream, for checkpointing at
    /// episode boundaries.
    fn rng_state(&self) -> RngState;
    fn restore_rng(&mut self, state: RngState);
}

/// Classic fourth-order Runge-Kutta over a fixed number of substeps.
pub(crate) fn rk4<const N: usize>(
    state: &mut [f64; N],
    dt: f64,
    substeps: usize,
    derivative: impl Fn(&[f64; N]) -> [f64; N],
) {
    let h = dt / substeps as f64;
    for _ in 0..substeps {
        let k1 = derivative(state);
        let mut mid = *state;
        for i in 0..N {
            mid[i] = state[i] + 0.5 * h * k1[i];
        }
        let k2 = derivative(&mid);
        for i in 0..N {
            mid[i] = state[i] + 0.5 * h * k2[i];
        }
        let k3 = derivative(&mid);
        for i in 0..N {
            mid[i] = state[i] + h * k3[i];
        }
        let k4 = derivative(&mid);
        for i in 0..N {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub(crate) fn wrap_angle(x: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut y = x % two_pi;
    if y <= -std::f64::consts::PI {
        y += two_pi;
    } else if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// One recorded step of a trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub observation: Vec<f64>,
    pub action: HybridAction,
    pub reward: f64,
    pub terminal: bool,
}

/// Writes golden-test trajectory dumps: a header followed by per-step
/// records, everything little-endian 64-bit floats (discrete indices and the
/// terminal flag included).
pub fn write_trajectory(
    w: &mut impl Write,
    records: &[TrajectoryRecord],
) -> Result<(), EnvError> {
    let (obs_dim, n_cont, n_disc) = records
        .first()
        .map(|r| {
            (
                r.observation.len(),
                r.action.continuous.len(),
                r.action.discrete.len(),
            )
        })
        .unwrap_or((0, 0, 0));
    w.write_all(b"TRAJDMP1")?;
    for v in [obs_dim as u32, n_cont as u32, n_disc as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        for &x in &r.observation {
            w.write_all(&x.to_le_bytes())?;
        }
        for &x in &r.action.continuous {
            w.write_all(&x.to_le_bytes())?;
        }
        for &k in &r.action.discrete {
            w.write_all(&(k as f64).to_le_bytes())?;
        }
        w.write_all(&r.reward.to_le_bytes())?;
        w.write_all(&(if r.terminal { 1.0f64 } else { 0.0 }).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_trajectory(r: &mut impl Read) -> Result<Vec<TrajectoryRecord>, EnvError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != b"TRAJDMP1" {
        return Err(EnvError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "bad trajectory magic",
        )));
    }
    let mut b4 = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32, EnvError> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let obs_dim = read_u32(r)? as usize;
    let n_cont = read_u32(r)? as usize;
    let n_disc = read_u32(r)? as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n_steps = u64::from_le_bytes(b8) as usize;
    let read_f64 = move |r: &mut dyn Read| -> Result<f64, EnvError> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let mut observation = Vec::with_capacity(obs_dim);
        for _ in 0..obs_dim {
            observation.push(read_f64(r)?);
        }
        let mut continuous = Vec::with_capacity(n_cont);
        for _ in 0..n_cont {
            continuous.push(read_f64(r)?);
        }
        let mut discrete = Vec::with_capacity(n_disc);
        for _ in 0..n_disc {
            discrete.push(read_f64(r)? as usize);
        }
        let reward = read_f64(r)?;
        let terminal = read_f64(r)? != 0.0;
        out.push(TrajectoryRecord {
            observation,
            action: HybridAction {
                continuous,
                discrete,
            },
            reward,
            terminal,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_wrapping_lands_in_half_open_interval() {
        use std::f64::consts::PI;
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn trajectory_dump_round_trips() {
        let records = vec![
            TrajectoryRecord {
                observation: vec![0.1, 0.2],
                action: HybridAction {
                    continuous: vec![0.5],
                    discrete: vec![2],
                },
                reward: 0.75,
                terminal: false,
            },
            TrajectoryRecord {
                observation: vec![-0.1, 0.9],
                action: HybridAction {
                    continuous: vec![-0.25],
                    discrete: vec![0],
                },
                reward: 1.0,
                terminal: true,
            },
        ];
        let mut bytes = Vec::new();
        write_trajectory(&mut bytes, &records).unwrap();
        let back = read_trajectory(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, records);
    }
}
