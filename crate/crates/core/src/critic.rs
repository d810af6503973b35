//! Off-policy Q-function learning with Retrace targets.
//!
//! The Q-network consumes the state concatenated with an action encoding
//! (continuous dimensions raw, discrete dimensions one-hot). Targets follow
//! the Retrace recursion with importance ratios truncated at one, computed
//! from current-policy log probabilities against the behavior log
//! probabilities stored in the replay buffer.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Network, NodeId, Tape};
use crate::policy::{self, HybridDistributionParams};
use crate::replay::SequenceTransition;
use crate::space::{ActionSpace, HybridAction};

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("batch entry {index}: {reason}")]
    BadBatch { index: usize, reason: String },
    #[error("non-finite retrace target in sequence {index}")]
    NonFiniteTarget { index: usize },
    #[error("exact expectation needs a purely discrete action space")]
    NotEnumerable,
    #[error(transparent)]
    Diff(#[from] crate::autodiff::DiffError),
}

/// Anything that can score a state-action pair. Implemented by [`QFunction`]
/// and by tabular test oracles.
pub trait StateActionValue {
    fn value(&self, state: &[f64], action: &HybridAction) -> f64;
}

/// Deterministic fixed-length critic input: state, raw continuous action
/// values, then one one-hot block per discrete dimension.
pub fn encode(state: &[f64], action: &HybridAction, space: &ActionSpace) -> Vec<f64> {
    space
        .validate_action(action)
        .expect("action conforms to space");
    let mut out = Vec::with_capacity(state.len() + space.encoded_action_len());
    out.extend_from_slice(state);
    out.extend_from_slice(&action.continuous);
    for (&k, &count) in action.discrete.iter().zip(&space.category_counts()) {
        let start = out.len();
        out.resize(start + count, 0.0);
        out[start + k] = 1.0;
    }
    out
}

/// A Q-network over encoded (state, action) pairs with a scalar output.
#[derive(Debug)]
pub struct QFunction {
    net: Network,
    space: ActionSpace,
}

impl QFunction {
    pub fn new(net: Network, space: ActionSpace) -> Self {
        assert_eq!(net.output_dim(), 1, "Q-network output must be scalar");
        assert!(
            net.input_dim() > space.encoded_action_len(),
            "Q-network input must cover state plus encoded action"
        );
        Self { net, space }
    }

    pub fn observation_dim(&self) -> usize {
        self.net.input_dim() - self.space.encoded_action_len()
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }
}

impl StateActionValue for QFunction {
    fn value(&self, state: &[f64], action: &HybridAction) -> f64 {
        let input = encode(state, action, &self.space);
        self.net.eval(&input).expect("encoded input matches Q net")[0]
    }
}

/// Monte Carlo estimate of `E_pi [ Q(s, a) ]` from `samples` fresh policy
/// draws.
pub fn expected_q(
    state: &[f64],
    params: &HybridDistributionParams,
    q: &impl StateActionValue,
    space: &ActionSpace,
    samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    assert!(samples >= 1);
    let mut acc = 0.0;
    for _ in 0..samples {
        let a = policy::sample(params, space, rng);
        acc += q.value(state, &a);
    }
    acc / samples as f64
}

/// Exact `E_pi [ Q(s, a) ]` by enumerating a purely discrete action space.
pub fn exact_expected_q(
    state: &[f64],
    params: &HybridDistributionParams,
    q: &impl StateActionValue,
    space: &ActionSpace,
) -> Result<f64, CriticError> {
    let actions = space
        .enumerate_discrete()
        .ok_or(CriticError::NotEnumerable)?;
    let mut acc = 0.0;
    for a in &actions {
        let weight: f64 = a
            .discrete
            .iter()
            .enumerate()
            .map(|(d, &k)| params.cat_probs[d][k])
            .product();
        acc += weight * q.value(state, a);
    }
    Ok(acc)
}

/// How bootstrap expectations over the policy are evaluated.
#[derive(Debug, Clone, Copy)]
pub enum ExpectationKind {
    /// Fresh Monte Carlo samples per target computation.
    MonteCarlo { samples: usize },
    /// Exhaustive enumeration; purely discrete spaces only.
    Enumerate,
}

/// Per-sequence, per-step Retrace targets and the clipped importance ratios.
#[derive(Debug, Clone)]
pub struct RetraceBatchTargets {
    /// `Q^ret_t` for each step of each sequence.
    pub targets: Vec<Vec<f64>>,
    /// `c_k` for each step of each sequence; entry 0 is unused and fixed at 1.
    pub ratios: Vec<Vec<f64>>,
}

/// Computes the Retrace targets
/// `Q^ret_t = Q'(s_t,a_t) + sum_{j>=t} gamma^{j-t} (prod_{k=t+1..j} c_k)
///            [r_j + gamma E_pi Q'(s_{j+1}) - Q'(s_j,a_j)]`
/// with `c_k = min(1, pi(a_k|s_k) / b(a_k|s_k))` against the stored behavior
/// log probabilities. Terminal steps drop the bootstrap expectation.
pub fn retrace_targets<Q, P>(
    batch: &[SequenceTransition],
    policy_params_fn: &P,
    q_target: &Q,
    space: &ActionSpace,
    gamma: f64,
    expectation: ExpectationKind,
    rng: &mut impl Rng,
) -> Result<RetraceBatchTargets, CriticError>
where
    Q: StateActionValue,
    P: Fn(&[f64]) -> HybridDistributionParams,
{
    assert!((0.0..1.0).contains(&gamma), "discount must lie in [0, 1)");
    let mut targets = Vec::with_capacity(batch.len());
    let mut ratios = Vec::with_capacity(batch.len());
    for (index, seq) in batch.iter().enumerate() {
        let n = seq.n_steps();
        if n == 0 || seq.behavior_log_probs.len() != n {
            return Err(CriticError::BadBatch {
                index,
                reason: "sequence lacks steps or behavior log probabilities".into(),
            });
        }

        // Clipped importance ratios from log-probability differences;
        // underflow floors the ratio at zero.
        let mut c = vec![1.0; n];
        for k in 1..n {
            let params = policy_params_fn(&seq.states[k]);
            let lp_pi = policy::log_prob(&params, space, &seq.actions[k]);
            let diff = lp_pi - seq.behavior_log_probs[k];
            c[k] = if diff >= 0.0 { 1.0 } else { diff.exp() };
        }

        let q_sa: Vec<f64> = (0..n)
            .map(|j| q_target.value(&seq.states[j], &seq.actions[j]))
            .collect();

        let mut expected = vec![0.0; n];
        for j in 0..n {
            if seq.terminals[j] {
                continue;
            }
            let params = policy_params_fn(&seq.states[j + 1]);
            expected[j] = match expectation {
                ExpectationKind::MonteCarlo { samples } => {
                    expected_q(&seq.states[j + 1], &params, q_target, space, samples, rng)
                }
                ExpectationKind::Enumerate => {
                    exact_expected_q(&seq.states[j + 1], &params, q_target, space)?
                }
            };
        }

        let mut seq_targets = vec![0.0; n];
        let mut correction_next = 0.0;
        for t in (0..n).rev() {
            let delta = seq.rewards[t] + gamma * expected[t] - q_sa[t];
            let correction = if t + 1 < n {
                delta + gamma * c[t + 1] * correction_next
            } else {
                delta
            };
            seq_targets[t] = q_sa[t] + correction;
            correction_next = correction;
        }
        if seq_targets.iter().any(|v| !v.is_finite()) {
            return Err(CriticError::NonFiniteTarget { index });
        }
        targets.push(seq_targets);
        ratios.push(c);
    }
    Ok(RetraceBatchTargets { targets, ratios })
}

/// A scalar loss recorded on a tape, ready for one backward sweep.
pub struct LossGraph {
    pub loss: f64,
    pub tape: Tape,
    pub node: NodeId,
}

/// Mean squared error between `Q(s_t, a_t)` and fixed Retrace targets,
/// differentiable in the Q-network parameters.
pub fn q_loss(
    batch: &[SequenceTransition],
    targets: &RetraceBatchTargets,
    q: &QFunction,
) -> Result<LossGraph, CriticError> {
    assert_eq!(batch.len(), targets.targets.len(), "targets align with batch");
    let mut tape = q.net.tape();
    let mut terms = Vec::new();
    let mut count = 0usize;
    for (seq, seq_targets) in batch.iter().zip(&targets.targets) {
        for t in 0..seq.n_steps() {
            let input = encode(&seq.states[t], &seq.actions[t], &q.space);
            let x = tape.constant(&input);
            let y = q.net.apply_on_tape(&mut tape, x)?;
            let err = tape.offset(y, -seq_targets[t]);
            let sq = tape.mul(err, err);
            terms.push((sq, 1.0));
            count += 1;
        }
    }
    let scale = 1.0 / count.max(1) as f64;
    let scaled: Vec<(NodeId, f64)> = terms.into_iter().map(|(id, _)| (id, scale)).collect();
    let node = tape.lin_comb(&scaled, 0.0);
    let loss = tape.value(node)[0];
    Ok(LossGraph { loss, tape, node })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{build_network, finite_difference_gradient, Activation};
    use crate::space::Dim;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    struct ConstantQ(f64);
    impl StateActionValue for ConstantQ {
        fn value(&self, _: &[f64], _: &HybridAction) -> f64 {
            self.0
        }
    }

    fn hybrid_space() -> ActionSpace {
        ActionSpace::new(vec![
            Dim::Continuous { low: -1.0, high: 1.0 },
            Dim::Discrete { k: 3 },
        ])
        .unwrap()
    }

    #[test]
    fn encode_one_hot_and_lengths() {
        let space = hybrid_space();
        let state = [0.5, -0.25];
        let action = HybridAction {
            continuous: vec![0.9],
            discrete: vec![1],
        };
        let enc = encode(&state, &action, &space);
        assert_eq!(enc, vec![0.5, -0.25, 0.9, 0.0, 1.0, 0.0]);
        assert_eq!(enc.len(), 2 + space.encoded_action_len());
    }

    #[test]
    #[should_panic]
    fn encode_rejects_out_of_range_index() {
        let space = hybrid_space();
        let action = HybridAction {
            continuous: vec![0.0],
            discrete: vec![3],
        };
        let _ = encode(&[0.0], &action, &space);
    }

    #[test]
    fn expected_q_of_constant_is_exact_for_any_sample_count() {
        let space = hybrid_space();
        let params = HybridDistributionParams {
            means: vec![0.0],
            stddevs: vec![1.0],
            cat_probs: vec![vec![0.2, 0.5, 0.3]],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for m in [1, 7, 20] {
            let v = expected_q(&[0.0], &params, &ConstantQ(2.5), &space, m, &mut rng);
            assert_eq!(v, 2.5);
        }
    }

    struct LinearQ;
    impl StateActionValue for LinearQ {
        fn value(&self, _: &[f64], action: &HybridAction) -> f64 {
            action.continuous.first().copied().unwrap_or(0.0)
                + action.discrete.first().map(|&k| k as f64 * 10.0).unwrap_or(0.0)
        }
    }

    #[test]
    fn expected_q_of_degenerate_policy_is_q_at_the_mean_action() {
        let space = hybrid_space();
        let params = HybridDistributionParams {
            means: vec![0.4],
            stddevs: vec![1e-13],
            cat_probs: vec![vec![0.0, 0.0, 1.0]],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let v = expected_q(&[0.0], &params, &LinearQ, &space, 20, &mut rng);
        assert!((v - 20.4).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_matches_enumeration_within_standard_error() {
        let space = ActionSpace::new(vec![Dim::Discrete { k: 2 }, Dim::Discrete { k: 3 }]).unwrap();
        let params = HybridDistributionParams {
            means: vec![],
            stddevs: vec![],
            cat_probs: vec![vec![0.3, 0.7], vec![0.5, 0.2, 0.3]],
        };
        struct JointQ;
        impl StateActionValue for JointQ {
            fn value(&self, _: &[f64], a: &HybridAction) -> f64 {
                (a.discrete[0] * 3 + a.discrete[1]) as f64 * 1.7 - 2.0
            }
        }
        let exact = exact_expected_q(&[0.0], &params, &JointQ, &space).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let m = 20_000usize;
        // Sample std of the Q values to bound the Monte Carlo error.
        let draws: Vec<f64> = (0..m)
            .map(|_| JointQ.value(&[0.0], &policy::sample(&params, &space, &mut rng)))
            .collect();
        let mean = draws.iter().sum::<f64>() / m as f64;
        let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "mc {mean} vs exact {exact} (se {se})"
        );
    }

    fn one_step_sequence(reward: f64, terminal: bool) -> SequenceTransition {
        SequenceTransition {
            states: vec![vec![0.0], vec![1.0]],
            actions: vec![HybridAction {
                continuous: vec![0.2],
                discrete: vec![0],
            }],
            rewards: vec![reward],
            behavior_log_probs: vec![-1.3],
            terminals: vec![terminal],
        }
    }

    fn uniform_params() -> HybridDistributionParams {
        HybridDistributionParams {
            means: vec![0.0],
            stddevs: vec![1.0],
            cat_probs: vec![vec![1.0 / 3.0; 3]],
        }
    }

    #[test]
    fn on_policy_one_step_target_reduces_to_td() {
        // pi == b so c = 1; with N = 1 the target is r + gamma E Q(s').
        let space = hybrid_space();
        let seq = {
            let mut s = one_step_sequence(2.0, false);
            let params = uniform_params();
            s.behavior_log_probs = vec![policy::log_prob(&params, &space, &s.actions[0])];
            s
        };
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let out = retrace_targets(
            &[seq],
            &|_: &[f64]| uniform_params(),
            &ConstantQ(5.0),
            &space,
            0.99,
            ExpectationKind::MonteCarlo { samples: 8 },
            &mut rng,
        )
        .unwrap();
        assert!((out.targets[0][0] - (2.0 + 0.99 * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn ratios_clip_at_one_and_floor_at_zero() {
        let space = hybrid_space();
        let mut seq = SequenceTransition {
            states: vec![vec![0.0], vec![1.0], vec![2.0]],
            actions: vec![
                HybridAction {
                    continuous: vec![0.1],
                    discrete: vec![0],
                },
                HybridAction {
                    continuous: vec![0.0],
                    discrete: vec![1],
                },
            ],
            rewards: vec![1.0, -1.0],
            behavior_log_probs: vec![-1.0, -50.0], // behavior much less likely than pi
            terminals: vec![false, false],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let out = retrace_targets(
            &[seq.clone()],
            &|_: &[f64]| uniform_params(),
            &ConstantQ(0.0),
            &space,
            0.9,
            ExpectationKind::MonteCarlo { samples: 4 },
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.ratios[0][1], 1.0, "pi >> b clips to exactly 1");

        seq.behavior_log_probs = vec![-1.0, 800.0]; // impossibly likely behavior
        let out = retrace_targets(
            &[seq],
            &|_: &[f64]| uniform_params(),
            &ConstantQ(0.0),
            &space,
            0.9,
            ExpectationKind::MonteCarlo { samples: 4 },
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.ratios[0][1], 0.0, "underflow floors the ratio at zero");
    }

    #[test]
    fn zero_discount_targets_equal_rewards() {
        let space = hybrid_space();
        let seq = SequenceTransition {
            states: vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            actions: (0..3)
                .map(|k| HybridAction {
                    continuous: vec![0.1 * k as f64],
                    discrete: vec![k % 3],
                })
                .collect(),
            rewards: vec![1.5, -0.5, 3.0],
            behavior_log_probs: vec![-1.0; 3],
            terminals: vec![false; 3],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let out = retrace_targets(
            &[seq],
            &|_: &[f64]| uniform_params(),
            &ConstantQ(7.0),
            &space,
            0.0,
            ExpectationKind::MonteCarlo { samples: 2 },
            &mut rng,
        )
        .unwrap();
        // gamma = 0: Q^ret_t = Q(s_t,a_t) + (r_t - Q(s_t,a_t)) = r_t.
        assert_eq!(out.targets[0], vec![1.5, -0.5, 3.0]);
    }

    #[test]
    fn terminal_step_drops_the_bootstrap() {
        let space = hybrid_space();
        let seq = one_step_sequence(2.0, true);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let out = retrace_targets(
            &[seq],
            &|_: &[f64]| uniform_params(),
            &ConstantQ(100.0),
            &space,
            0.99,
            ExpectationKind::MonteCarlo { samples: 4 },
            &mut rng,
        )
        .unwrap();
        assert!((out.targets[0][0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_products_are_non_increasing() {
        let space = hybrid_space();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let params = uniform_params();
        let n = 5;
        let actions: Vec<HybridAction> = (0..n)
            .map(|_| policy::sample(&params, &space, &mut rng))
            .collect();
        let seq = SequenceTransition {
            states: (0..=n).map(|i| vec![i as f64]).collect(),
            actions: actions.clone(),
            rewards: vec![0.1; n],
            behavior_log_probs: actions
                .iter()
                .map(|a| policy::log_prob(&params, &space, a) + rng.random_range(-0.5..0.5))
                .collect(),
            terminals: vec![false; n],
        };
        let out = retrace_targets(
            &[seq],
            &|_: &[f64]| uniform_params(),
            &ConstantQ(0.0),
            &space,
            0.9,
            ExpectationKind::MonteCarlo { samples: 2 },
            &mut rng,
        )
        .unwrap();
        let c = &out.ratios[0];
        assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut product = 1.0;
        let mut last = 1.0;
        for k in 1..n {
            product *= c[k];
            assert!(product <= last + 1e-15);
            last = product;
        }
    }

    #[test]
    fn q_loss_zero_when_outputs_equal_targets_and_offset_squares() {
        let space = hybrid_space();
        let net = build_network(&[1 + space.encoded_action_len(), 8, 1], Activation::Elu, false, 3)
            .unwrap();
        let q = QFunction::new(net, space.clone());
        let seq = one_step_sequence(0.0, false);
        let batch = vec![seq.clone()];
        let q_value = q.value(&seq.states[0], &seq.actions[0]);

        let exact = RetraceBatchTargets {
            targets: vec![vec![q_value]],
            ratios: vec![vec![1.0]],
        };
        let loss = q_loss(&batch, &exact, &q).unwrap();
        assert!(loss.loss.abs() < 1e-30);

        let offset = RetraceBatchTargets {
            targets: vec![vec![q_value + 0.3]],
            ratios: vec![vec![1.0]],
        };
        let loss = q_loss(&batch, &offset, &q).unwrap();
        assert!((loss.loss - 0.09).abs() < 1e-12, "constant offset squares");
    }

    #[test]
    fn q_loss_gradient_matches_finite_differences() {
        let space = hybrid_space();
        let input_dim = 2 + space.encoded_action_len();
        let net = build_network(&[input_dim, 6, 1], Activation::Elu, false, 9).unwrap();
        let mut q = QFunction::new(net, space.clone());
        let seq = SequenceTransition {
            states: vec![vec![0.2, -0.4], vec![0.3, 0.1], vec![0.5, 0.0]],
            actions: vec![
                HybridAction {
                    continuous: vec![0.6],
                    discrete: vec![2],
                },
                HybridAction {
                    continuous: vec![-0.3],
                    discrete: vec![0],
                },
            ],
            rewards: vec![1.0, 0.5],
            behavior_log_probs: vec![-1.0, -1.0],
            terminals: vec![false, false],
        };
        let batch = vec![seq];
        let targets = RetraceBatchTargets {
            targets: vec![vec![0.7, -0.2]],
            ratios: vec![vec![1.0, 1.0]],
        };
        let graph = q_loss(&batch, &targets, &q).unwrap();
        let grads = q.net().backward_scalar(&graph.tape, graph.node).unwrap();

        let base = q.net().params().to_vec();
        let fd = finite_difference_gradient(
            &mut |p: &[f64]| {
                q.net_mut().params_mut().copy_from_slice(p);
                q_loss(&batch, &targets, &q).unwrap().loss
            },
            &base,
            1e-5,
        );
        for (g, f) in grads.iter().zip(&fd) {
            let rel = (g - f).abs() / g.abs().max(f.abs()).max(1e-6);
            assert!(rel < 1e-4, "grad {g} vs fd {f}");
        }
    }
}
