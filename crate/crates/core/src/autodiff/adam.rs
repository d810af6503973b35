//! Bias-corrected Adam parameter updates.

use super::DiffError;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    /// State for `len` parameters. Default moment constants beta1 = 0.9,
    /// beta2 = 0.999, epsilon = 1e-8.
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first_moment, &self.second_moment)
    }

    pub(crate) fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, step_count: u64) {
        assert_eq!(m.len(), self.first_moment.len());
        assert_eq!(v.len(), self.second_moment.len());
        self.first_moment = m;
        self.second_moment = v;
        self.step_count = step_count;
    }
}

/// One Adam update applied in place. Non-finite gradient entries are
/// surfaced as an error rather than clipped.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(DiffError::GradientDim {
            got: grads.len(),
            want: params.len(),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(DiffError::NonFiniteGradient { index });
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        state.second_moment[i] = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.first_moment[i] / bc1;
        let v_hat = state.second_moment[i] / bc2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_leaves_parameters_fixed() {
        let mut params = vec![1.0, -2.0, 0.5];
        let mut state = AdamState::new(3, 3e-4);
        adam_step(&mut params, &[0.0, 0.0, 0.0], &mut state).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_decays_loaded_moments_by_beta() {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, 3e-4);
        adam_step(&mut params, &[0.4], &mut state).unwrap();
        let (m0, v0) = state.moments();
        let (m0, v0) = (m0[0], v0[0]);
        adam_step(&mut params, &[0.0], &mut state).unwrap();
        let (m1, v1) = state.moments();
        assert!((m1[0] - m0 * 0.9).abs() < 1e-15);
        assert!((v1[0] - v0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // Hand evaluation of the recurrences at t = 1 with constant g:
        // m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps) ~ lr * sign(g).
        let mut params = vec![0.0, 0.0];
        let mut state = AdamState::new(2, 0.01);
        adam_step(&mut params, &[5.0, -0.3], &mut state).unwrap();
        assert!((params[0] + 0.01).abs() < 1e-7);
        assert!((params[1] - 0.01).abs() < 1e-7);
    }

    #[test]
    fn identical_gradient_sequences_give_identical_trajectories() {
        let grads = [vec![0.3, -0.2], vec![-0.1, 0.4], vec![0.0, 0.25]];
        let run = || {
            let mut params = vec![1.0, 1.0];
            let mut state = AdamState::new(2, 1e-3);
            for g in &grads {
                adam_step(&mut params, g, &mut state).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut params = vec![0.7, -0.3];
        let mut state = AdamState::new(2, 0.0);
        for k in 0..5 {
            adam_step(&mut params, &[k as f64, -1.0], &mut state).unwrap();
        }
        assert_eq!(params, vec![0.7, -0.3]);
    }

    #[test]
    fn non_finite_gradients_are_surfaced() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1, 1e-3);
        assert!(matches!(
            adam_step(&mut params, &[f64::NAN], &mut state),
            Err(DiffError::NonFiniteGradient { index: 0 })
        ));
        assert_eq!(state.step_count(), 0, "failed update must not count");
    }
}
