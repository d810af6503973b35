//! Rotary inverted pendulum with a velocity-controlled base motor.
//!
//! The arm motor tracks a commanded velocity setpoint through a first-order
//! lag; the pendulum joint is passive. The pendulum equation of motion for a
//! point mass at distance `l` on an arm of radius `r` is
//! `beta'' = (g/l) sin b + a'^2 sin b cos b - (r/l) a'' cos b - c b'`,
//! with `a` the arm angle and `b` the pendulum angle from upright.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{rk4, tolerance_reward, wrap_angle, EnvError, Environment, RngState, Step};
use crate::space::{ActionSpace, HybridAction};

/// Reward variant of the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FurutaMode {
    /// One when the pendulum is upright within 5 degrees while the motor sits
    /// within 15 degrees of the backward position.
    SparseBack,
    /// As above but around the forward position.
    SparseFront,
    /// Product of position, velocity, and action shaping terms.
    Shaped,
}

#[derive(Debug, Clone)]
pub struct FurutaParams {
    /// Arm pivot-to-pendulum radius in meters.
    pub arm_radius: f64,
    /// Pendulum pivot-to-mass distance in meters.
    pub pend_length: f64,
    pub gravity: f64,
    /// Pendulum viscous damping coefficient (1/s).
    pub pend_damping: f64,
    /// Maximum arm velocity setpoint (rad/s) for a full-scale action.
    pub max_velocity: f64,
    /// Velocity tracking time constant of the base motor (s).
    pub motor_tau: f64,
    /// Pendulum speed triggering protective termination (rad/s).
    pub velocity_guard: f64,
    pub dt: f64,
    pub substeps: usize,
    pub episode_limit: usize,
}

impl Default for FurutaParams {
    fn default() -> Self {
        Self {
            arm_radius: 0.085,
            pend_length: 0.065,
            gravity: 9.81,
            pend_damping: 0.1,
            max_velocity: 35.0,
            motor_tau: 0.025,
            velocity_guard: 55.0,
            dt: 0.01,
            substeps: 5,
            episode_limit: 1000,
        }
    }
}

#[derive(Debug)]
pub struct FurutaEnv {
    params: FurutaParams,
    mode: FurutaMode,
    space: ActionSpace,
    rng: ChaCha12Rng,
    /// `[alpha, beta, alpha_dot, beta_dot]`: motor angle from the front
    /// position, pendulum angle from upright, and their velocities.
    state: [f64; 4],
    steps: usize,
    needs_reset: bool,
}

impl FurutaEnv {
    pub fn new(params: FurutaParams, mode: FurutaMode, seed: u64) -> Self {
        Self {
            params,
            mode,
            space: ActionSpace::unit_continuous(1),
            rng: ChaCha12Rng::seed_from_u64(seed),
            state: [0.0, std::f64::consts::PI, 0.0, 0.0],
            steps: 0,
            needs_reset: true,
        }
    }

    pub fn mode(&self) -> FurutaMode {
        self.mode
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.needs_reset = false;
    }

    fn observe(&self) -> Vec<f64> {
        let [alpha, beta, alpha_dot, beta_dot] = self.state;
        vec![
            alpha.cos(),
            alpha.sin(),
            beta.cos(),
            beta.sin(),
            alpha_dot,
            beta_dot,
        ]
    }

    fn integrate(&mut self, setpoint: f64) {
        let p = self.params.clone();
        rk4(&mut self.state, p.dt, p.substeps, |s| {
            let [_alpha, beta, alpha_dot, beta_dot] = *s;
            let alpha_acc = (setpoint - alpha_dot) / p.motor_tau;
            let (sin_b, cos_b) = beta.sin_cos();
            let beta_acc = p.gravity / p.pend_length * sin_b
                + alpha_dot * alpha_dot * sin_b * cos_b
                - p.arm_radius / p.pend_length * alpha_acc * cos_b
                - p.pend_damping * beta_dot;
            [alpha_dot, beta_dot, alpha_acc, beta_acc]
        });
        self.state[0] = wrap_angle(self.state[0]);
        self.state[1] = wrap_angle(self.state[1]);
    }

    fn reward(&self, command: f64) -> f64 {
        let [alpha, beta, alpha_dot, beta_dot] = self.state;
        let deg = std::f64::consts::PI / 180.0;
        match self.mode {
            FurutaMode::SparseBack => {
                let back_err = wrap_angle(alpha - std::f64::consts::PI).abs();
                if back_err < 15.0 * deg && wrap_angle(beta).abs() < 5.0 * deg {
                    1.0
                } else {
                    0.0
                }
            }
            FurutaMode::SparseFront => {
                if wrap_angle(alpha).abs() < 15.0 * deg && wrap_angle(beta).abs() < 5.0 * deg {
                    1.0
                } else {
                    0.0
                }
            }
            FurutaMode::Shaped => {
                // Position error from the upright pendulum.
                let e_pos = 1.0 - beta.cos();
                let r_pos = tolerance_reward(e_pos, 0.1);
                let v_norm = (alpha_dot * alpha_dot + beta_dot * beta_dot).sqrt();
                let r_vel = (-0.05 * v_norm).exp();
                let r_action = (-0.1 * command.abs()).exp();
                r_pos * r_vel * r_action
            }
        }
    }
}

impl Environment for FurutaEnv {
    fn observation_dim(&self) -> usize {
        6
    }

    fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    fn episode_limit(&self) -> usize {
        self.params.episode_limit
    }

    fn reset(&mut self) -> Vec<f64> {
        let alpha = self.rng.random_range(-0.05..0.05);
        let beta = std::f64::consts::PI + self.rng.random_range(-0.05..0.05);
        self.state = [alpha, wrap_angle(beta), 0.0, 0.0];
        self.steps = 0;
        self.needs_reset = false;
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<Step, EnvError> {
        if self.needs_reset {
            return Err(EnvError::SteppedAfterDone);
        }
        self.space.validate_action(action)?;
        let mut cmd = action.continuous.clone();
        self.space.clamp_continuous(&mut cmd);
        self.integrate(cmd[0] * self.params.max_velocity);
        self.steps += 1;
        let reward = self.reward(cmd[0]);
        let terminal = self.state[3].abs() > self.params.velocity_guard;
        let done = terminal || self.steps >= self.params.episode_limit;
        self.needs_reset = done;
        Ok(Step {
            observation: self.observe(),
            reward,
            terminal,
            done,
        })
    }

    fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn restore_rng(&mut self, state: RngState) {
        self.rng = state.rebuild();
    }
}
