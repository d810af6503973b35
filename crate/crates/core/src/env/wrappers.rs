//! Action-space wrappers: uniform discretization, the argmax-trick adapter,
//! act-or-repeat meta actions, and single-actuator action attention.

use super::{EnvError, Environment, RngState, Step};
use crate::space::{ActionSpace, Dim, HybridAction};

/// Replaces every continuous dimension by `bins` evenly spaced values over
/// its interval; existing discrete dimensions pass through untouched.
pub struct DiscretizeWrapper {
    inner: Box<dyn Environment>,
    bins: usize,
    space: ActionSpace,
}

impl DiscretizeWrapper {
    pub fn new(inner: Box<dyn Environment>, bins: usize) -> Result<Self, EnvError> {
        if bins < 2 {
            return Err(EnvError::WrapperPrecondition("at least 2 bins"));
        }
        if inner.action_space().n_continuous() == 0 {
            return Err(EnvError::AlreadyDiscrete);
        }
        let dims = inner
            .action_space()
            .dims()
            .iter()
            .map(|d| match *d {
                Dim::Continuous { .. } => Dim::Discrete { k: bins },
                Dim::Discrete { k } => Dim::Discrete { k },
            })
            .collect();
        let space = ActionSpace::new(dims).expect("non-empty dims");
        Ok(Self { inner, bins, space })
    }

    /// Value of bin `index` on `[low, high]`: `low + index (high-low)/(k-1)`.
    pub fn bin_value(low: f64, high: f64, bins: usize, index: usize) -> f64 {
        low + index as f64 * (high - low) / (bins - 1) as f64
    }
}

impl Environment for DiscretizeWrapper {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    fn episode_limit(&self) -> usize {
        self.inner.episode_limit()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    fn step(&mut self, action: &HybridAction) -> Result<Step, EnvError> {
        self.space.validate_action(action)?;
        let mut indices = action.discrete.iter();
        let mut continuous = Vec::new();
        let mut discrete = Vec::new();
        for dim in self.inner.action_space().dims() {
            let &index = indices.next().expect("validated layout");
            match *dim {
                Dim::Continuous { low, high } => {
                    continuous.push(Self::bin_value(low, high, self.bins, index));
                }
                Dim::Discrete { .. } => discrete.push(index),
            }
        }
        self.inner.step(&HybridAction {
            continuous,
            discrete,
        })
    }

    fn rng_state(&self) -> RngState {
        self.inner.rng_state()
    }

    fn restore_rng(&mut self, state: RngState) {
        self.inner.restore_rng(state);
    }
}

/// Replaces each discrete dimension by one continuous weight per option; at
/// step time the highest-weighted option is applied, ties broken by the
/// lowest index.
pub struct ArgmaxTrickWrapper {
    inner: Box<dyn Environment>,
    space: ActionSpace,
}

impl ArgmaxTrickWrapper {
    pub fn new(inner: Box<dyn Environment>) -> Result<Self, EnvError> {
        if inner.action_space().n_discrete() == 0 {
            return Err(EnvError::WrapperPrecondition(
                "at least one discrete dimension",
            ));
        }
        let mut dims = Vec::new();
        for d in inner.action_space().dims() {
            match *d {
                Dim::Continuous { low, high } => dims.push(Dim::Continuous { low, high }),
                Dim::Discrete { k } => {
                    for _ in 0..k {
                        dims.push(Dim::Continuous { low: -1.0, high: 1.0 });
                    }
                }
            }
        }
        let space = ActionSpace::new(dims).expect("non-empty dims");
        Ok(Self { inner, space })
    }
}

impl Environment for ArgmaxTrickWrapper {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    fn episode_limit(&self) -> usize {
        self.inner.episode_limit()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    fn step(&mut self, action: &HybridAction) -> Result<Step, EnvError> {
        self.space.validate_action(action)?;
        let mut values = action.continuous.iter();
        let mut continuous = Vec::new();
        let mut discrete = Vec::new();
        for dim in self.inner.action_space().dims() {
            match *dim {
                Dim::Continuous { .. } => {
                    continuous.push(*values.next().expect("validated layout"));
                }
                Dim::Discrete { k } => {
                    let mut best = 0usize;
                    let mut best_w = f64::NEG_INFINITY;
                    for j in 0..k {
                        let w = *values.next().expect("validated layout");
                        if w > best_w {
                            best_w = w;
                            best = j;
                        }
                    }
                    discrete.push(best);
                }
            }
        }
        self.inner.step(&HybridAction {
            continuous,
            discrete,
        })
    }

    fn rng_state(&self) -> RngState {
        self.inner.rng_state()
    }

    fn restore_rng(&mut self, state: RngState) {
        self.inner.restore_rng(state);
    }
}

/// Appends a binary meta action: 0 applies the freshly provided inner
/// action, 1 re-applies the previously applied one (a zero action on the
/// first step). The previously applied inner action is appended to the
/// observation so the problem stays Markovian.
pub struct ActOrRepeatWrapper {
    inner: Box<dyn Environment>,
    space: ActionSpace,
    previous: HybridAction,
}

impl ActOrRepeatWrapper {
    pub fn new(inner: Box<dyn Environment>) -> Self {
        let mut dims = inner.action_space().dims().to_vec();
        dims.push(Dim::Discrete { k: 2 });
        let space = ActionSpace::new(dims).expect("non-empty dims");
        let previous = Self::zero_action(inner.action_space());
        Self {
            inner,
            space,
            previous,
        }
    }

    fn zero_action(space: &ActionSpace) -> HybridAction {
        HybridAction {
            continuous: vec![0.0; space.n_continuous()],
            discrete: vec![0; space.n_discrete()],
        }
    }

    fn extend_observation(&self, mut obs: Vec<f64>) -> Vec<f64> {
        obs.extend_from_slice(&self.previous.continuous);
        obs.extend(self.previous.discrete.iter().map(|&k| k as f64));
        obs
    }
}

impl Environment for ActOrRepeatWrapper {
    fn observation_dim(&self) -> usize {
        let inner_space = self.inner.action_space();
        self.inner.observation_dim() + inner_space.n_continuous() + inner_space.n_discrete()
    }

    fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    fn episode_limit(&self) -> usize {
        self.inner.episode_limit()
    }

    fn reset(&mut self) -> Vec<f64> {
        let obs = self.inner.reset();
        self.previous = Self::zero_action(self.inner.action_space());
        self.extend_observation(obs)
    }

    fn step(&mut self, action: &HybridAction) -> Result<Step, EnvError> {
        self.space.validate_action(action)?;
        let inner_disc = self.inner.action_space().n_discrete();
        let repeat = action.discrete[inner_disc] == 1;
        let applied = if repeat {
            self.previous.clone()
        } else {
            HybridAction {
                continuous: action.continuous.clone(),
                discrete: action.discrete[..inner_disc].to_vec(),
            }
        };
        let step = self.inner.step(&applied)?;
        self.previous = applied;
        Ok(Step {
            observation: self.extend_observation(step.observation),
            ..step
        })
    }

    fn rng_state(&self) -> RngState {
        self.inner.rng_state()
    }

    fn restore_rng(&mut self, state: RngState) {
        self.inner.restore_rng(state);
    }
}

/// A discrete action selects exactly one actuator; a single continuous
/// command drives it while every other actuator receives zero.
pub struct ActionAttentionWrapper {
    inner: Box<dyn Environment>,
    space: ActionSpace,
    scales: Vec<f64>,
}

impl ActionAttentionWrapper {
    pub fn new(inner: Box<dyn Environment>) -> Result<Self, EnvError> {
        let inner_space = inner.action_space();
        if !inner_space.is_continuous_only() {
            return Err(EnvError::WrapperPrecondition(
                "a fully continuous inner environment",
            ));
        }
        let bounds = inner_space.continuous_bounds();
        if bounds.iter().any(|&(low, high)| low != -high) {
            return Err(EnvError::WrapperPrecondition(
                "symmetric actuator ranges so zero maps to zero",
            ));
        }
        let n_act = bounds.len();
        let space = ActionSpace::new(vec![
            Dim::Discrete { k: n_act.max(2) },
            Dim::Continuous { low: -1.0, high: 1.0 },
        ])
        .expect("static layout");
        let scales = bounds.iter().map(|&(_, high)| high).collect();
        Ok(Self {
            inner,
            space,
            scales,
        })
    }
}

impl Environment for ActionAttentionWrapper {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    fn episode_limit(&self) -> usize {
        self.inner.episode_limit()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    fn step(&mut self, action: &HybridAction) -> Result<Step, EnvError> {
        self.space.validate_action(action)?;
        let selected = action.discrete[0].min(self.scales.len() - 1);
        let mut continuous = vec![0.0; self.scales.len()];
        continuous[selected] = action.continuous[0].clamp(-1.0, 1.0) * self.scales[selected];
        self.inner.step(&HybridAction {
            continuous,
            discrete: vec![],
        })
    }

    fn rng_state(&self) -> RngState {
        self.inner.rng_state()
    }

    fn restore_rng(&mut self, state: RngState) {
        self.inner.restore_rng(state);
    }
}

/// Pins one discrete dimension to a fixed category and removes it from the
/// exposed action space. Used for single-mode baselines of hybrid tasks.
pub struct FixDiscreteWrapper {
    inner: Box<dyn Environment>,
    space: ActionSpace,
    /// Index among the discrete dimensions, and the pinned category.
    dim: usize,
    value: usize,
}

impl FixDiscreteWrapper {
    pub fn new(inner: Box<dyn Environment>, dim: usize, value: usize) -> Result<Self, EnvError> {
        let counts = inner.action_space().category_counts();
        if dim >= counts.len() || value >= counts[dim] {
            return Err(EnvError::WrapperPrecondition(
                "a valid discrete dimension and category to pin",
            ));
        }
        let mut seen = 0usize;
        let dims = inner
            .action_space()
            .dims()
            .iter()
            .filter(|d| {
                if matches!(d, Dim::Discrete { .. }) {
                    let keep = seen != dim;
                    seen += 1;
                    keep
                } else {
                    true
                }
            })
            .cloned()
            .collect();
        let space = ActionSpace::new(dims).expect("at least one dimension remains");
        Ok(Self {
            inner,
            space,
            dim,
            value,
        })
    }
}

impl Environment for FixDiscreteWrapper {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    fn episode_limit(&self) -> usize {
        self.inner.episode_limit()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    fn step(&mut self, action: &HybridAction) -> Result<Step, EnvError> {
        self.space.validate_action(action)?;
        let mut discrete = action.discrete.clone();
        discrete.insert(self.dim, self.value);
        self.inner.step(&HybridAction {
            continuous: action.continuous.clone(),
            discrete,
        })
    }

    fn rng_state(&self) -> RngState {
        self.inner.rng_state()
    }

    fn restore_rng(&mut self, state: RngState) {
        self.inner.restore_rng(state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{PendulumEnv, PendulumParams};
    use std::cell::RefCell;
    use std::rc::Rc;

    /// Records every inner action it receives.
    struct ProbeEnv {
        space: ActionSpace,
        log: Rc<RefCell<Vec<HybridAction>>>,
    }

    impl ProbeEnv {
        fn boxed(space: ActionSpace) -> (Box<dyn Environment>, Rc<RefCell<Vec<HybridAction>>>) {
            let log = Rc::new(RefCell::new(Vec::new()));
            (
                Box::new(ProbeEnv {
                    space,
                    log: log.clone(),
                }),
                log,
            )
        }
    }

    impl Environment for ProbeEnv {
        fn observation_dim(&self) -> usize {
            1
        }
        fn action_space(&self) -> &ActionSpace {
            &self.space
        }
        fn episode_limit(&self) -> usize {
            1000
        }
        fn reset(&mut self) -> Vec<f64> {
            vec![0.0]
        }
        fn step(&mut self, action: &HybridAction) -> Result<Step, EnvError> {
            self.log.borrow_mut().push(action.clone());
            Ok(Step {
                observation: vec![self.log.borrow().len() as f64],
                reward: 0.0,
                terminal: false,
                done: false,
            })
        }
        fn rng_state(&self) -> RngState {
            RngState {
                seed: [0; 32],
                word_pos: 0,
                stream: 0,
            }
        }
        fn restore_rng(&mut self, _state: RngState) {}
    }

    #[test]
    fn fix_discrete_pins_a_mode_and_hides_its_dimension() {
        let (probe, log) = ProbeEnv::boxed(
            ActionSpace::new(vec![
                Dim::Discrete { k: 2 },
                Dim::Continuous { low: -1.0, high: 1.0 },
                Dim::Discrete { k: 3 },
            ])
            .unwrap(),
        );
        let mut env = FixDiscreteWrapper::new(probe, 0, 1).unwrap();
        assert_eq!(env.action_space().n_discrete(), 1);
        env.reset();
        env.step(&HybridAction {
            continuous: vec![0.5],
            discrete: vec![2],
        })
        .unwrap();
        let inner = log.borrow()[0].clone();
        assert_eq!(inner.discrete, vec![1, 2], "pinned mode inserted in place");
        assert_eq!(inner.continuous, vec![0.5]);
    }

    #[test]
    fn discretize_three_bins_maps_to_minus_one_zero_one() {
        let (probe, log) = ProbeEnv::boxed(ActionSpace::unit_continuous(1));
        let mut env = DiscretizeWrapper::new(probe, 3).unwrap();
        env.reset();
        for index in 0..3 {
            env.step(&HybridAction::discrete(vec![index])).unwrap();
        }
        let applied: Vec<f64> = log.borrow().iter().map(|a| a.continuous[0]).collect();
        assert_eq!(applied, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn discretize_61_bins_has_uniform_spacing_with_zero_center() {
        assert_eq!(DiscretizeWrapper::bin_value(-1.0, 1.0, 61, 30), 0.0);
        let spacing = DiscretizeWrapper::bin_value(-1.0, 1.0, 61, 1)
            - DiscretizeWrapper::bin_value(-1.0, 1.0, 61, 0);
        assert!((spacing - 1.0 / 30.0).abs() < 1e-15);
        assert_eq!(DiscretizeWrapper::bin_value(-1.0, 1.0, 61, 60), 1.0);
    }

    #[test]
    fn discretize_two_bins_is_bang_bang() {
        assert_eq!(DiscretizeWrapper::bin_value(-1.0, 1.0, 2, 0), -1.0);
        assert_eq!(DiscretizeWrapper::bin_value(-1.0, 1.0, 2, 1), 1.0);
    }

    #[test]
    fn discretize_rejects_fully_discrete_envs() {
        let (probe, _) = ProbeEnv::boxed(ActionSpace::new(vec![Dim::Discrete { k: 3 }]).unwrap());
        assert!(matches!(
            DiscretizeWrapper::new(probe, 3),
            Err(EnvError::AlreadyDiscrete)
        ));
    }

    #[test]
    fn argmax_applies_the_highest_weight_with_low_index_ties() {
        let (probe, log) = ProbeEnv::boxed(ActionSpace::new(vec![Dim::Discrete { k: 3 }]).unwrap());
        let mut env = ArgmaxTrickWrapper::new(probe).unwrap();
        assert_eq!(env.action_space().n_continuous(), 3);
        env.reset();
        env.step(&HybridAction::continuous(vec![0.2, 0.7, 0.1])).unwrap();
        env.step(&HybridAction::continuous(vec![0.5, 0.5, 0.5])).unwrap();
        let applied: Vec<usize> = log.borrow().iter().map(|a| a.discrete[0]).collect();
        assert_eq!(applied, vec![1, 0], "argmax then tie to lowest index");
    }

    #[test]
    fn argmax_passes_continuous_dimensions_through() {
        let (probe, log) = ProbeEnv::boxed(
            ActionSpace::new(vec![
                Dim::Continuous { low: -1.0, high: 1.0 },
                Dim::Discrete { k: 2 },
            ])
            .unwrap(),
        );
        let mut env = ArgmaxTrickWrapper::new(probe).unwrap();
        env.reset();
        env.step(&HybridAction::continuous(vec![0.33, -0.2, 0.8])).unwrap();
        let inner = log.borrow()[0].clone();
        assert_eq!(inner.continuous, vec![0.33]);
        assert_eq!(inner.discrete, vec![1]);
    }

    #[test]
    fn argmax_one_hot_weights_reproduce_the_discrete_env_exactly() {
        // For every option: stepping the discretized env with index i equals
        // stepping the argmax-wrapped env with a one-hot weight vector at i.
        for option in 0..3 {
            let base1 = PendulumEnv::new(PendulumParams::default(), 42);
            let mut direct = DiscretizeWrapper::new(Box::new(base1), 3).unwrap();
            let base2 = PendulumEnv::new(PendulumParams::default(), 42);
            let disc = DiscretizeWrapper::new(Box::new(base2), 3).unwrap();
            let mut wrapped = ArgmaxTrickWrapper::new(Box::new(disc)).unwrap();

            direct.reset();
            wrapped.reset();
            let a = direct.step(&HybridAction::discrete(vec![option])).unwrap();
            let mut weights = vec![0.0; 3];
            weights[option] = 1.0;
            let b = wrapped.step(&HybridAction::continuous(weights)).unwrap();
            assert_eq!(a, b, "option {option}");
        }
    }

    #[test]
    fn act_or_repeat_replays_the_previous_applied_action() {
        let (probe, log) = ProbeEnv::boxed(ActionSpace::unit_continuous(1));
        let mut env = ActOrRepeatWrapper::new(probe);
        let obs0 = env.reset();
        assert_eq!(obs0, vec![0.0, 0.0], "observation tail starts at zero");

        // First step chooses repeat: a zero action is applied.
        let s = env
            .step(&HybridAction {
                continuous: vec![0.9],
                discrete: vec![1],
            })
            .unwrap();
        assert_eq!(log.borrow()[0].continuous, vec![0.0]);
        assert_eq!(s.observation[1], 0.0);

        // Act applies the fresh command and the observation tail follows.
        let s = env
            .step(&HybridAction {
                continuous: vec![0.4],
                discrete: vec![0],
            })
            .unwrap();
        assert_eq!(log.borrow()[1].continuous, vec![0.4]);
        assert_eq!(s.observation[1], 0.4);

        // Repeat re-applies 0.4 exactly, ignoring the new command.
        let s = env
            .step(&HybridAction {
                continuous: vec![-0.8],
                discrete: vec![1],
            })
            .unwrap();
        assert_eq!(log.borrow()[2].continuous, vec![0.4]);
        assert_eq!(s.observation[1], 0.4);
    }

    #[test]
    fn action_attention_zero_fills_unselected_actuators() {
        let (probe, log) = ProbeEnv::boxed(ActionSpace::unit_continuous(4));
        let mut env = ActionAttentionWrapper::new(probe).unwrap();
        env.reset();
        env.step(&HybridAction {
            continuous: vec![0.5],
            discrete: vec![2],
        })
        .unwrap();
        assert_eq!(log.borrow()[0].continuous, vec![0.0, 0.0, 0.5, 0.0]);

        // Zero command yields an all-zero inner action for any selection.
        env.step(&HybridAction {
            continuous: vec![0.0],
            discrete: vec![1],
        })
        .unwrap();
        assert_eq!(log.borrow()[1].continuous, vec![0.0; 4]);
    }

    #[test]
    fn action_attention_on_one_actuator_is_identity_on_the_command() {
        let (probe, log) = ProbeEnv::boxed(ActionSpace::unit_continuous(1));
        let mut env = ActionAttentionWrapper::new(probe).unwrap();
        env.reset();
        // The discrete head needs two categories; both select actuator 0.
        for (k, cmd) in [(0usize, 0.3), (1usize, -0.7)] {
            env.step(&HybridAction {
                continuous: vec![cmd],
                discrete: vec![k],
            })
            .unwrap();
        }
        let applied: Vec<f64> = log.borrow().iter().map(|a| a.continuous[0]).collect();
        assert_eq!(applied, vec![0.3, -0.7]);
    }

    #[test]
    fn wrapper_composition_yields_the_declared_composite_space() {
        // discretize then act-or-repeat.
        let base = PendulumEnv::new(PendulumParams::default(), 0);
        let disc = DiscretizeWrapper::new(Box::new(base), 3).unwrap();
        let a = ActOrRepeatWrapper::new(Box::new(disc));
        let dims_a = a.action_space().dims().to_vec();

        // act-or-repeat then discretize.
        let base = PendulumEnv::new(PendulumParams::default(), 0);
        let aor = ActOrRepeatWrapper::new(Box::new(base));
        let b = DiscretizeWrapper::new(Box::new(aor), 3).unwrap();
        let dims_b = b.action_space().dims().to_vec();

        assert_eq!(dims_a, vec![Dim::Discrete { k: 3 }, Dim::Discrete { k: 2 }]);
        assert_eq!(dims_b, vec![Dim::Discrete { k: 3 }, Dim::Discrete { k: 2 }]);
    }
}
