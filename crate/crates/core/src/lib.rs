//! Hybrid discrete-continuous reinforcement learning toolkit.
//!
//! Implements MPO-style policy iteration over hybrid action spaces: a factored
//! Gaussian x categorical policy class, Retrace off-policy Q-learning, and a
//! KL-constrained EM-style policy improvement step, together with a minimal
//! reverse-mode differentiation engine and desk-scale simulated control tasks
//! (pendulum and cartpole swing-up, a rotary inverted pendulum, a two-mode
//! peg-in-hole) plus the action-space wrappers used in the experiments
//! (discretization, argmax-trick, act-or-repeat, action attention).

pub mod autodiff;
pub mod critic;
pub mod env;
pub mod harness;
pub mod mpo;
pub mod policy;
pub mod replay;
pub mod space;
pub mod tabular;

pub use autodiff::{AdamState, Network, Tape};
pub use policy::HybridDistributionParams;
pub use space::{ActionSpace, Dim, HybridAction};
