//! Small enumerable MDPs for checking the Retrace recursion against dynamic
//! programming.
//!
//! Transitions are deterministic and action spaces purely discrete, so the
//! expected Retrace update can be computed exactly by enumerating every
//! behavior-policy action path of a window. The dynamic-programming oracle
//! evaluates the target policy by value iteration and never touches the
//! Retrace code path.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::critic::{retrace_targets, ExpectationKind, StateActionValue};
use crate::policy::HybridDistributionParams;
use crate::replay::SequenceTransition;
use crate::space::{ActionSpace, Dim, HybridAction};

/// A deterministic-transition MDP over a purely discrete hybrid space, with
/// per-state behavior and target policies given as per-dimension categorical
/// probabilities.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub space: ActionSpace,
    pub actions: Vec<HybridAction>,
    /// `next_state[s][a]` under the enumerated joint action index `a`.
    pub next_state: Vec<Vec<usize>>,
    pub reward: Vec<Vec<f64>>,
    /// Behavior policy `b(.|s)`: per-dimension categoricals, full support.
    pub behavior: Vec<Vec<Vec<f64>>>,
    /// Target policy `pi(.|s)` to evaluate.
    pub target: Vec<Vec<Vec<f64>>>,
}

fn random_categorical(rng: &mut ChaCha12Rng, k: usize, min_mass: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..k).map(|_| rng.random_range(min_mass..1.0)).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

impl TabularMdp {
    /// Random MDP with the given per-dimension category counts. Behavior and
    /// target policies both have full support.
    pub fn random(n_states: usize, category_counts: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let space = ActionSpace::new(
            category_counts
                .iter()
                .map(|&k| Dim::Discrete { k })
                .collect(),
        )
        .expect("at least one discrete dimension");
        let actions = space.enumerate_discrete().expect("purely discrete");
        let n_actions = actions.len();
        let next_state = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random_range(0..n_states)).collect())
            .collect();
        let reward = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let policy = |rng: &mut ChaCha12Rng| {
            (0..n_states)
                .map(|_| {
                    category_counts
                        .iter()
                        .map(|&k| random_categorical(rng, k, 0.05))
                        .collect()
                })
                .collect()
        };
        let behavior = policy(&mut rng);
        let target = policy(&mut rng);
        Self {
            n_states,
            space,
            actions,
            next_state,
            reward,
            behavior,
            target,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    fn joint_prob(dists: &[Vec<f64>], action: &HybridAction) -> f64 {
        action
            .discrete
            .iter()
            .enumerate()
            .map(|(d, &k)| dists[d][k])
            .product()
    }

    pub fn target_params(&self, state: usize) -> HybridDistributionParams {
        HybridDistributionParams {
            means: vec![],
            stddevs: vec![],
            cat_probs: self.target[state].clone(),
        }
    }

    fn behavior_log_prob(&self, state: usize, action: &HybridAction) -> f64 {
        Self::joint_prob(&self.behavior[state], action).ln()
    }

    /// Q^pi by value iteration, run to a fixpoint far tighter than the
    /// tolerances it is used to check.
    pub fn dp_q_values(&self, gamma: f64) -> Vec<Vec<f64>> {
        let n_a = self.n_actions();
        let mut q = vec![vec![0.0; n_a]; self.n_states];
        for _ in 0..100_000 {
            let mut next = vec![vec![0.0; n_a]; self.n_states];
            let mut change: f64 = 0.0;
            for s in 0..self.n_states {
                for a in 0..n_a {
                    let s2 = self.next_state[s][a];
                    let v: f64 = (0..n_a)
                        .map(|a2| {
                            Self::joint_prob(&self.target[s2], &self.actions[a2]) * q[s2][a2]
                        })
                        .sum();
                    next[s][a] = self.reward[s][a] + gamma * v;
                    change = change.max((next[s][a] - q[s][a]).abs());
                }
            }
            q = next;
            if change < 1e-14 {
                break;
            }
        }
        q
    }

    /// All length-`n_steps` windows starting from `(s, a)`, enumerating every
    /// behavior action path, together with the path probabilities.
    fn windows_from(
        &self,
        state: usize,
        action_index: usize,
        n_steps: usize,
    ) -> Vec<(SequenceTransition, f64)> {
        let mut done = Vec::new();
        // Partial paths: (states so far, action indices so far, probability).
        let mut frontier = vec![(
            vec![state, self.next_state[state][action_index]],
            vec![action_index],
            1.0f64,
        )];
        for _ in 1..n_steps {
            let mut next_frontier = Vec::new();
            for (states, acts, prob) in frontier {
                let s = *states.last().unwrap();
                for a in 0..self.n_actions() {
                    let p = prob * Self::joint_prob(&self.behavior[s], &self.actions[a]);
                    let mut st = states.clone();
                    st.push(self.next_state[s][a]);
                    let mut ac = acts.clone();
                    ac.push(a);
                    next_frontier.push((st, ac, p));
                }
            }
            frontier = next_frontier;
        }
        for (states, acts, prob) in frontier {
            let seq = SequenceTransition {
                states: states.iter().map(|&s| vec![s as f64]).collect(),
                actions: acts.iter().map(|&a| self.actions[a].clone()).collect(),
                rewards: acts
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| self.reward[states[i]][a])
                    .collect(),
                behavior_log_probs: acts
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| self.behavior_log_prob(states[i], &self.actions[a]))
                    .collect(),
                terminals: vec![false; acts.len()],
            };
            done.push((seq, prob));
        }
        done
    }

    /// One exact application of the windowed Retrace operator: for every
    /// state-action pair, the expectation of the Retrace target over all
    /// behavior paths, evaluated through [`retrace_targets`].
    pub fn retrace_sweep(&self, q: &TabularQ, gamma: f64, n_steps: usize) -> TabularQ {
        let mut rng = ChaCha12Rng::seed_from_u64(0); // unused by Enumerate mode
        let mut values = vec![vec![0.0; self.n_actions()]; self.n_states];
        for s in 0..self.n_states {
            for a in 0..self.n_actions() {
                let windows = self.windows_from(s, a, n_steps);
                let batch: Vec<SequenceTransition> =
                    windows.iter().map(|(seq, _)| seq.clone()).collect();
                let out = retrace_targets(
                    &batch,
                    &|obs: &[f64]| self.target_params(obs[0] as usize),
                    q,
                    &self.space,
                    gamma,
                    ExpectationKind::Enumerate,
                    &mut rng,
                )
                .expect("enumeration cannot fail on tabular MDPs");
                values[s][a] = windows
                    .iter()
                    .zip(&out.targets)
                    .map(|((_, prob), targets)| prob * targets[0])
                    .sum();
            }
        }
        TabularQ {
            values,
            counts: self.space.category_counts(),
        }
    }

    /// Iterates [`Self::retrace_sweep`] from zero and reports the first
    /// iteration whose sup-norm distance to the DP oracle drops below `tol`.
    pub fn retrace_convergence(
        &self,
        gamma: f64,
        n_steps: usize,
        max_iterations: usize,
        tol: f64,
    ) -> Option<usize> {
        let oracle = self.dp_q_values(gamma);
        let mut q = TabularQ {
            values: vec![vec![0.0; self.n_actions()]; self.n_states],
            counts: self.space.category_counts(),
        };
        for iteration in 1..=max_iterations {
            q = self.retrace_sweep(&q, gamma, n_steps);
            let sup = q
                .values
                .iter()
                .flatten()
                .zip(oracle.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if sup <= tol {
                return Some(iteration);
            }
        }
        None
    }
}

/// Tabular Q lookup keyed by the integer state observation and the mixed-radix
/// joint action index.
#[derive(Debug, Clone)]
pub struct TabularQ {
    pub values: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl TabularQ {
    pub fn zeros(n_states: usize, space: &ActionSpace) -> Self {
        let counts = space.category_counts();
        let n_actions: usize = counts.iter().product();
        Self {
            values: vec![vec![0.0; n_actions]; n_states],
            counts,
        }
    }

    fn joint_index(&self, action: &HybridAction) -> usize {
        let mut index = 0;
        for (d, &k) in action.discrete.iter().enumerate() {
            index = index * self.counts[d] + k;
        }
        index
    }
}

impl StateActionValue for TabularQ {
    fn value(&self, state: &[f64], action: &HybridAction) -> f64 {
        self.values[state[0] as usize][self.joint_index(action)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_state_two_action_mdp_converges_to_dp_values() {
        let mdp = TabularMdp::random(3, &[2], 7);
        let hit = mdp.retrace_convergence(0.9, 3, 200, 1e-6);
        assert!(hit.is_some(), "no convergence within 200 sweeps");
    }

    #[test]
    fn five_state_six_action_mdps_converge() {
        for seed in 0..3 {
            let mdp = TabularMdp::random(5, &[2, 3], 100 + seed);
            let hit = mdp.retrace_convergence(0.9, 3, 200, 1e-6);
            assert!(hit.is_some(), "seed {seed}: no convergence in 200 sweeps");
        }
    }

    #[test]
    fn dp_oracle_satisfies_the_bellman_equation() {
        let mdp = TabularMdp::random(4, &[3], 11);
        let gamma = 0.9;
        let q = mdp.dp_q_values(gamma);
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions() {
                let s2 = mdp.next_state[s][a];
                let v: f64 = (0..mdp.n_actions())
                    .map(|a2| {
                        TabularMdp::joint_prob(&mdp.target[s2], &mdp.actions[a2]) * q[s2][a2]
                    })
                    .sum();
                let rhs = mdp.reward[s][a] + gamma * v;
                assert!((q[s][a] - rhs).abs() < 1e-10);
            }
        }
    }
}
