//! Float helpers that `core` does not provide.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn powi(x: f64, n: u64) -> f64 {
    libm::pow(x, n as f64)
}

/// Input range accepted by [`sigmoid`]; outside it the input is clamped.
pub const SIGMOID_CLAMP: f64 = 30.0;

/// Logistic function with the input clamped to `[-30, 30]`, so that both `ln(p)` and
/// `ln(1 - p)` stay finite.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + exp(-x))
}

/// Standard normal sample from two uniforms in `(0, 1]` and `[0, 1)` (Box-Muller).
#[inline]
pub fn box_muller(u1: f64, u2: f64) -> f64 {
    sqrt(-2.0 * ln(u1)) * cos(core::f64::consts::TAU * u2)
}
