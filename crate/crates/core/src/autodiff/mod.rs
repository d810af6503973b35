//! Minimal reverse-mode differentiation engine: operation tape, multilayer
//! perceptrons, and the Adam update rule. Everything is 64-bit and
//! deterministic given seeds.

mod adam;
mod network;
mod tape;

pub use adam::{adam_step, AdamState};
pub use network::{build_network, copy_into_target, parameter_count, Activation, Head, Network};
pub use tape::{NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("layer {0} has zero width")]
    ZeroWidthLayer(usize),
    #[error("need at least input and output sizes, got {0}")]
    TooFewLayers(usize),
    #[error("first-layer normalization requires at least one hidden layer")]
    NormNeedsHiddenLayer,
    #[error("input has length {got}, network expects {want}")]
    InputDim { got: usize, want: usize },
    #[error("gradient has length {got}, expected {want}")]
    GradientDim { got: usize, want: usize },
    #[error("tape is stale: parameters were mutated after recording")]
    StaleTape,
    #[error("tape was recorded against a different network")]
    WrongNetwork,
    #[error("network layouts do not match")]
    LayoutMismatch,
    #[error("gradient entry {index} is not finite")]
    NonFiniteGradient { index: usize },
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Central-difference gradient estimate, one coordinate at a time. This is
/// the independent oracle the reverse-mode engine is checked against.
pub fn finite_difference_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_of_sum_is_all_ones() {
        let g = finite_difference_gradient(&mut |x| x.iter().sum(), &[0.3, -2.0, 5.5], 1e-5);
        for v in g {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_difference_of_product_at_2_3() {
        let g = finite_difference_gradient(&mut |x| x[0] * x[1], &[2.0, 3.0], 1e-5);
        assert!((g[0] - 3.0).abs() < 1e-9);
        assert!((g[1] - 2.0).abs() < 1e-9);
    }
}
