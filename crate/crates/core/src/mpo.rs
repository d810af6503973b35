//! EM-style policy improvement with KL constraints.
//!
//! Step 1 (E-step): per state, sample actions from the current policy, score
//! them with the Q-function, and reweight with `softmax(Q / eta*)`, where the
//! temperature minimizes the convex dual `g(eta)`. Step 2 (M-step): fit the
//! parametric policy to the weighted samples under decoupled KL constraints,
//! solved by alternating gradient steps on the policy parameters and
//! projected gradient steps on the Lagrange multipliers.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{adam_step, AdamState, Network, NodeId, Tape};
use crate::critic::StateActionValue;
use crate::policy::{
    self, heads_on_tape, kl_categorical_mean_on_tape, kl_gaussian_on_tape, log_prob_on_tape,
    HybridDistributionParams,
};
use crate::space::{ActionSpace, HybridAction};

/// Temperature clamps guarding degenerate Q landscapes.
pub const ETA_MIN: f64 = 1e-8;
pub const ETA_MAX: f64 = 1e6;

#[derive(Debug, Error)]
pub enum MpoError {
    #[error("temperature solver stalled at eta = {eta}")]
    SolverStalled { eta: f64 },
    #[error("dual function needs a positive temperature, got {0}")]
    NonPositiveEta(f64),
    #[error(transparent)]
    Diff(#[from] crate::autodiff::DiffError),
}

/// Per-row stable `log(mean_j exp(q_ij / eta))`.
fn log_mean_exp_over_eta(row: &[f64], eta: f64) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean: f64 =
        row.iter().map(|&q| ((q - max) / eta).exp()).sum::<f64>() / row.len() as f64;
    max / eta + mean.ln()
}

/// Sample-based dual of the E-step constraint:
/// `g(eta) = eta * epsilon + eta * mean_i log(mean_j exp(Q_ij / eta))`,
/// computed with per-row max subtraction.
pub fn dual_value(eta: f64, q_values: &[Vec<f64>], epsilon: f64) -> Result<f64, MpoError> {
    if eta <= 0.0 {
        return Err(MpoError::NonPositiveEta(eta));
    }
    let mean_lme: f64 = q_values
        .iter()
        .map(|row| log_mean_exp_over_eta(row, eta))
        .sum::<f64>()
        / q_values.len() as f64;
    Ok(eta * epsilon + eta * mean_lme)
}

/// Analytic derivative of the dual in the temperature.
fn dual_gradient(eta: f64, q_values: &[Vec<f64>], epsilon: f64) -> f64 {
    let n = q_values.len() as f64;
    let mut mean_lme = 0.0;
    let mut mean_soft_q = 0.0;
    for row in q_values {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&q| ((q - max) / eta).exp()).collect();
        let total: f64 = exps.iter().sum();
        mean_lme += max / eta + (total / row.len() as f64).ln();
        mean_soft_q += row.iter().zip(&exps).map(|(&q, &e)| q * e).sum::<f64>() / total;
    }
    mean_lme /= n;
    mean_soft_q /= n;
    epsilon + mean_lme - mean_soft_q / eta
}

/// Minimizes the dual over `[ETA_MIN, ETA_MAX]`: projected gradient descent
/// with backtracking, then a monotone-derivative bisection polish (the dual
/// is convex, so its derivative has at most one sign change).
pub fn solve_temperature(q_values: &[Vec<f64>], epsilon: f64) -> Result<f64, MpoError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    assert!(!q_values.is_empty());
    let clamp = |e: f64| e.clamp(ETA_MIN, ETA_MAX);
    let mut eta = 1.0;
    let mut g = dual_value(eta, q_values, epsilon)?;
    let mut step = 1.0;
    for _ in 0..200 {
        let d = dual_gradient(eta, q_values, epsilon);
        if d.abs() < 1e-12 * epsilon.max(1.0) {
            break;
        }
        let mut moved = false;
        for _ in 0..60 {
            let cand = clamp(eta - step * d);
            if cand == eta {
                break;
            }
            let gc = dual_value(cand, q_values, epsilon)?;
            // Armijo condition against the projected displacement.
            if gc <= g - 1e-4 * d * (eta - cand) {
                eta = cand;
                g = gc;
                step *= 1.5;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }

    // Bracket the derivative root around the descent endpoint, then bisect in
    // log space. The clamped ends stand in when the minimum sits outside.
    let mut lo = eta;
    let mut hi = eta;
    if dual_gradient(eta, q_values, epsilon) > 0.0 {
        while lo > ETA_MIN && dual_gradient(lo, q_values, epsilon) > 0.0 {
            lo = clamp(lo / 4.0);
        }
        if dual_gradient(lo, q_values, epsilon) > 0.0 {
            return Ok(ETA_MIN);
        }
    } else {
        while hi < ETA_MAX && dual_gradient(hi, q_values, epsilon) < 0.0 {
            hi = clamp(hi * 4.0);
        }
        if dual_gradient(hi, q_values, epsilon) < 0.0 {
            return Ok(ETA_MAX);
        }
    }
    for _ in 0..200 {
        if hi / lo < 1.000001 {
            break;
        }
        let mid = (lo * hi).sqrt();
        if dual_gradient(mid, q_values, epsilon) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let eta = (lo * hi).sqrt();
    if !eta.is_finite() {
        return Err(MpoError::SolverStalled { eta });
    }
    Ok(clamp(eta))
}

/// Sampled actions, their weights, and the solved temperature for one batch.
#[derive(Debug, Clone)]
pub struct EStepResult {
    /// Per state: the actions sampled from the old policy.
    pub actions: Vec<Vec<HybridAction>>,
    /// Per state: normalized weights `q_ij`, one row per state.
    pub weights: Vec<Vec<f64>>,
    pub temperature: f64,
}

/// Row-wise `softmax(Q / eta)`. Max subtraction makes the weights exactly
/// invariant to shifting a row by a constant.
pub fn estep_weights(q_values: &[Vec<f64>], eta: f64) -> Vec<Vec<f64>> {
    q_values
        .iter()
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut w: Vec<f64> = row.iter().map(|&q| ((q - max) / eta).exp()).collect();
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            w
        })
        .collect()
}

/// Mean over states of `KL(weights || uniform)`.
pub fn weight_kl_to_uniform(weights: &[Vec<f64>]) -> f64 {
    let total: f64 = weights
        .iter()
        .map(|row| {
            let m = row.len() as f64;
            row.iter()
                .map(|&w| if w == 0.0 { 0.0 } else { w * (w * m).ln() })
                .sum::<f64>()
        })
        .sum();
    total / weights.len() as f64
}

/// Lagrange multipliers for the decoupled continuous/discrete KL bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeState {
    pub eta_c: f64,
    pub eta_d: f64,
    /// Step size of the projected multiplier update.
    pub learning_rate: f64,
}

impl LagrangeState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            eta_c: 1.0,
            eta_d: 1.0,
            learning_rate,
        }
    }
}

/// Cap keeping a persistently violated constraint from ratcheting its
/// multiplier without bound (the optimizer's step normalization puts a floor
/// on the per-round KL that no finite multiplier can undercut).
pub const MULTIPLIER_MAX: f64 = 1e3;

/// Projected gradient step on the multipliers: ascent on constraint
/// violation, scaled by the constraint level, clipped to `[0, MULTIPLIER_MAX]`.
pub fn update_multipliers(
    state: &mut LagrangeState,
    t_c: f64,
    t_d: f64,
    epsilon_c: f64,
    epsilon_d: f64,
) {
    state.eta_c =
        (state.eta_c + state.learning_rate * (t_c / epsilon_c - 1.0)).clamp(0.0, MULTIPLIER_MAX);
    state.eta_d =
        (state.eta_d + state.learning_rate * (t_d / epsilon_d - 1.0)).clamp(0.0, MULTIPLIER_MAX);
}

/// M-step loss recorded on a tape:
/// `-(1/S) sum_i sum_j q_ij log pi(a_ij | s_i)
///  + eta_c (T_c - eps_c) + eta_d (T_d - eps_d)`
/// with `T_c`/`T_d` the batch-mean Gaussian and mean-categorical KLs from the
/// old policy snapshot. Gradients flow to the policy parameters only.
pub struct MStepGraph {
    pub loss: f64,
    pub t_c: f64,
    pub t_d: f64,
    pub tape: Tape,
    pub node: NodeId,
}

#[allow(clippy::too_many_arguments)]
pub fn mstep_loss(
    policy_net: &Network,
    space: &ActionSpace,
    states: &[Vec<f64>],
    estep: &EStepResult,
    old_params: &[HybridDistributionParams],
    eta_c: f64,
    eta_d: f64,
    epsilon_c: f64,
    epsilon_d: f64,
) -> Result<MStepGraph, MpoError> {
    let s = states.len();
    assert!(s > 0 && estep.actions.len() == s && old_params.len() == s);
    let mut tape = policy_net.tape();
    let mut likelihood_terms: Vec<(NodeId, f64)> = Vec::new();
    let mut kl_c_terms: Vec<(NodeId, f64)> = Vec::with_capacity(s);
    let mut kl_d_terms: Vec<(NodeId, f64)> = Vec::with_capacity(s);
    let inv_s = 1.0 / s as f64;
    for (i, state) in states.iter().enumerate() {
        let x = tape.constant(state);
        let raw = policy_net.apply_on_tape(&mut tape, x)?;
        let heads = heads_on_tape(&mut tape, raw, space);
        for (action, &weight) in estep.actions[i].iter().zip(&estep.weights[i]) {
            let lp = log_prob_on_tape(&mut tape, &heads, action);
            likelihood_terms.push((lp, -weight * inv_s));
        }
        let klg = kl_gaussian_on_tape(&mut tape, &old_params[i], &heads);
        kl_c_terms.push((klg, inv_s));
        let kld = kl_categorical_mean_on_tape(&mut tape, &old_params[i], &heads);
        kl_d_terms.push((kld, inv_s));
    }
    let t_c_node = tape.lin_comb(&kl_c_terms, 0.0);
    let t_d_node = tape.lin_comb(&kl_d_terms, 0.0);
    let mut terms = likelihood_terms;
    terms.push((t_c_node, eta_c));
    terms.push((t_d_node, eta_d));
    let node = tape.lin_comb(&terms, -eta_c * epsilon_c - eta_d * epsilon_d);
    Ok(MStepGraph {
        loss: tape.value(node)[0],
        t_c: tape.value(t_c_node)[0],
        t_d: tape.value(t_d_node)[0],
        tape,
        node,
    })
}

/// Knobs of one policy improvement round.
#[derive(Debug, Clone)]
pub struct ImprovementConfig {
    /// E-step KL bound (dual constraint level).
    pub epsilon: f64,
    /// Continuous M-step KL bound.
    pub epsilon_c: f64,
    /// Mean categorical M-step KL bound.
    pub epsilon_d: f64,
    /// Actions sampled per state.
    pub samples_per_state: usize,
    /// Policy gradient steps per round (one multiplier step after each).
    pub mstep_steps: usize,
    /// Extra alternation steps allowed to restore violated constraints.
    pub max_extra_steps: usize,
}

impl Default for ImprovementConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            epsilon_c: 1e-3,
            epsilon_d: 1e-4,
            samples_per_state: 20,
            mstep_steps: 5,
            max_extra_steps: 50,
        }
    }
}

/// Diagnostics of one improvement round.
#[derive(Debug, Clone, Copy)]
pub struct ImprovementStats {
    pub temperature: f64,
    pub weight_kl: f64,
    pub t_c: f64,
    pub t_d: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub steps_taken: usize,
}

fn measure_kls(
    policy_net: &Network,
    space: &ActionSpace,
    states: &[Vec<f64>],
    old_params: &[HybridDistributionParams],
) -> (f64, f64) {
    let mut t_c = 0.0;
    let mut t_d = 0.0;
    for (state, old) in states.iter().zip(old_params) {
        let new = policy::policy_params(policy_net, state, space);
        t_c += policy::kl_gaussian(old, &new);
        t_d += policy::kl_categorical_mean(old, &new);
    }
    (t_c / states.len() as f64, t_d / states.len() as f64)
}

/// One full improvement round: sample actions from the policy snapshot,
/// score them, solve the temperature, then alternate policy and multiplier
/// steps. If the KL constraints are still violated after the scheduled steps
/// the alternation continues, up to a bounded number of extra steps.
#[allow(clippy::too_many_arguments)]
pub fn improvement_step(
    policy_net: &mut Network,
    policy_adam: &mut AdamState,
    q: &(impl StateActionValue + ?Sized),
    space: &ActionSpace,
    states: &[Vec<f64>],
    lagrange: &mut LagrangeState,
    cfg: &ImprovementConfig,
    rng: &mut impl Rng,
) -> Result<ImprovementStats, MpoError> {
    // Old-policy snapshot: parameters per state, actions, and Q scores.
    let old_params: Vec<HybridDistributionParams> = states
        .iter()
        .map(|s| policy::policy_params(policy_net, s, space))
        .collect();
    let mut actions = Vec::with_capacity(states.len());
    let mut q_values = Vec::with_capacity(states.len());
    for (state, params) in states.iter().zip(&old_params) {
        let row_actions: Vec<HybridAction> = (0..cfg.samples_per_state)
            .map(|_| policy::sample(params, space, rng))
            .collect();
        let row_q: Vec<f64> = row_actions.iter().map(|a| q.value(state, a)).collect();
        actions.push(row_actions);
        q_values.push(row_q);
    }

    let temperature = solve_temperature(&q_values, cfg.epsilon)?;
    let weights = estep_weights(&q_values, temperature);
    let weight_kl = weight_kl_to_uniform(&weights);
    let estep = EStepResult {
        actions,
        weights,
        temperature,
    };

    let mut t_c = 0.0;
    let mut t_d = 0.0;
    let mut steps_taken = 0;
    for step in 0..cfg.mstep_steps + cfg.max_extra_steps {
        if step >= cfg.mstep_steps && t_c <= 1.5 * cfg.epsilon_c && t_d <= 1.5 * cfg.epsilon_d {
            break;
        }
        let graph = mstep_loss(
            policy_net,
            space,
            states,
            &estep,
            &old_params,
            lagrange.eta_c,
            lagrange.eta_d,
            cfg.epsilon_c,
            cfg.epsilon_d,
        )?;
        let grads = policy_net.backward_scalar(&graph.tape, graph.node)?;
        adam_step(policy_net.params_mut(), &grads, policy_adam)?;
        steps_taken += 1;

        let (c, d) = measure_kls(policy_net, space, states, &old_params);
        t_c = c;
        t_d = d;
        update_multipliers(lagrange, t_c, t_d, cfg.epsilon_c, cfg.epsilon_d);
    }

    Ok(ImprovementStats {
        temperature,
        weight_kl,
        t_c,
        t_d,
        eta_c: lagrange.eta_c,
        eta_d: lagrange.eta_d,
        steps_taken,
    })
}
