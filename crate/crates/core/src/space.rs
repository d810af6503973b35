//! Action space layout shared by policies, critics, and environments.
//!
//! An action space is an ordered list of dimensions, each either a bounded
//! continuous interval or a finite set of categories. Purely continuous and
//! purely discrete spaces are valid special cases of the hybrid layout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("continuous dimension {index} has low {low} >= high {high}")]
    BadBounds { index: usize, low: f64, high: f64 },
    #[error("discrete dimension {index} needs at least 2 categories, got {k}")]
    TooFewCategories { index: usize, k: usize },
    #[error("action space must have at least one dimension")]
    Empty,
    #[error("action has {got} continuous entries, space expects {want}")]
    ContinuousLen { got: usize, want: usize },
    #[error("action has {got} discrete entries, space expects {want}")]
    DiscreteLen { got: usize, want: usize },
    #[error("discrete entry {index} is {got}, must be < {k}")]
    IndexOutOfRange { index: usize, got: usize, k: usize },
}

/// One action dimension: a real interval or a finite choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dim {
    Continuous { low: f64, high: f64 },
    Discrete { k: usize },
}

/// Ordered list of action dimensions with derived continuous/discrete counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    dims: Vec<Dim>,
}

impl ActionSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self, SpaceError> {
        if dims.is_empty() {
            return Err(SpaceError::Empty);
        }
        for (index, dim) in dims.iter().enumerate() {
            match *dim {
                Dim::Continuous { low, high } => {
                    if !(low < high) {
                        return Err(SpaceError::BadBounds { index, low, high });
                    }
                }
                Dim::Discrete { k } => {
                    if k < 2 {
                        return Err(SpaceError::TooFewCategories { index, k });
                    }
                }
            }
        }
        Ok(Self { dims })
    }

    /// Space with `n` continuous dimensions, all bounded to `[-1, 1]`.
    pub fn unit_continuous(n: usize) -> Self {
        Self::new(vec![Dim::Continuous { low: -1.0, high: 1.0 }; n]).expect("n >= 1")
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    /// Number of continuous dimensions, `|a^C|`.
    pub fn n_continuous(&self) -> usize {
        self.dims
            .iter()
            .filter(|d| matches!(d, Dim::Continuous { .. }))
            .count()
    }

    /// Number of discrete dimensions, `|a^D|`.
    pub fn n_discrete(&self) -> usize {
        self.dims.len() - self.n_continuous()
    }

    /// Bounds of the continuous dimensions, in dimension order.
    pub fn continuous_bounds(&self) -> Vec<(f64, f64)> {
        self.dims
            .iter()
            .filter_map(|d| match *d {
                Dim::Continuous { low, high } => Some((low, high)),
                Dim::Discrete { .. } => None,
            })
            .collect()
    }

    /// Category counts of the discrete dimensions, in dimension order.
    pub fn category_counts(&self) -> Vec<usize> {
        self.dims
            .iter()
            .filter_map(|d| match *d {
                Dim::Discrete { k } => Some(k),
                Dim::Continuous { .. } => None,
            })
            .collect()
    }

    pub fn is_continuous_only(&self) -> bool {
        self.n_discrete() == 0
    }

    pub fn is_discrete_only(&self) -> bool {
        self.n_continuous() == 0
    }

    /// Length of the raw policy head vector: `2|a^C| + sum_i K_i`
    /// (means, stddev parameters, then categorical logits per dimension).
    pub fn head_len(&self) -> usize {
        2 * self.n_continuous() + self.category_counts().iter().sum::<usize>()
    }

    /// Length of the critic's action encoding: raw continuous values plus
    /// one one-hot block per discrete dimension.
    pub fn encoded_action_len(&self) -> usize {
        self.n_continuous() + self.category_counts().iter().sum::<usize>()
    }

    /// Checks that an action conforms to this space's layout and index ranges.
    pub fn validate_action(&self, action: &HybridAction) -> Result<(), SpaceError> {
        let n_c = self.n_continuous();
        let counts = self.category_counts();
        if action.continuous.len() != n_c {
            return Err(SpaceError::ContinuousLen {
                got: action.continuous.len(),
                want: n_c,
            });
        }
        if action.discrete.len() != counts.len() {
            return Err(SpaceError::DiscreteLen {
                got: action.discrete.len(),
                want: counts.len(),
            });
        }
        for (index, (&idx, &k)) in action.discrete.iter().zip(&counts).enumerate() {
            if idx >= k {
                return Err(SpaceError::IndexOutOfRange { index, got: idx, k });
            }
        }
        Ok(())
    }

    /// Clamps each continuous entry into its dimension bounds. Used at the
    /// environment boundary; distributions keep the unclamped value.
    pub fn clamp_continuous(&self, values: &mut [f64]) {
        for ((low, high), v) in self.continuous_bounds().iter().zip(values.iter_mut()) {
            *v = v.clamp(*low, *high);
        }
    }

    /// Total number of joint actions of a purely discrete space, if it is one.
    pub fn joint_discrete_count(&self) -> Option<usize> {
        if !self.is_discrete_only() {
            return None;
        }
        Some(self.category_counts().iter().product())
    }

    /// Enumerates every joint action of a purely discrete space in
    /// lexicographic index order. Returns `None` for spaces with continuous
    /// dimensions.
    pub fn enumerate_discrete(&self) -> Option<Vec<HybridAction>> {
        let total = self.joint_discrete_count()?;
        let counts = self.category_counts();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; counts.len()];
        loop {
            out.push(HybridAction {
                continuous: Vec::new(),
                discrete: idx.clone(),
            });
            let mut d = counts.len();
            loop {
                if d == 0 {
                    return Some(out);
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

/// One hybrid action: the continuous vector and the discrete index vector,
/// each in dimension order of the owning [`ActionSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridAction {
    pub continuous: Vec<f64>,
    pub discrete: Vec<usize>,
}

impl HybridAction {
    pub fn continuous(values: Vec<f64>) -> Self {
        Self {
            continuous: values,
            discrete: Vec::new(),
        }
    }

    pub fn discrete(indices: Vec<usize>) -> Self {
        Self {
            continuous: Vec::new(),
            discrete: indices,
        }
    }
}
