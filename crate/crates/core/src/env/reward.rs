//! Distance-shaped reward primitive.

/// `1 - tanh^2(atanh(sqrt(0.95)) / w * |d|)`: equals 1 at `d = 0`, decays
/// monotonically, and crosses 0.05 exactly at `|d| = w`.
pub fn tolerance_reward(distance: f64, tolerance: f64) -> f64 {
    assert!(tolerance > 0.0, "tolerance width must be positive");
    let k = (0.95f64.sqrt()).atanh() / tolerance;
    let t = (k * distance.abs()).tanh();
    1.0 - t * t
}
