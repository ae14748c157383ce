//! Modified Bessel function of order zero from its defining integral
//! I0(y) = (1/pi) * int_0^pi exp(y cos(phi)) dphi.

use crate::quadrature::{integrate, Tolerance};
use std::f64::consts::PI;

const SCALED_SWITCH: f64 = 30.0;
const TOL: Tolerance = Tolerance::new(0.0, 5e-14);

/// I0(y). Overflows to infinity for |y| beyond roughly 713.
pub fn i0(y: f64) -> f64 {
    let y = y.abs();
    if y == 0.0 {
        return 1.0;
    }
    if y <= SCALED_SWITCH {
        integrate(|phi| (y * phi.cos()).exp(), 0.0, PI, TOL).value / PI
    } else {
        i0_scaled(y) * y.exp()
    }
}

/// e^{-|y|} I0(y), finite and smooth for every real y.
pub fn i0_scaled(y: f64) -> f64 {
    let y = y.abs();
    if y == 0.0 {
        return 1.0;
    }
    if y <= SCALED_SWITCH {
        return integrate(|phi| (y * (phi.cos() - 1.0)).exp(), 0.0, PI, TOL).value / PI;
    }
    // The mass sits in a window of width ~ 1/sqrt(y) around phi = 0; splitting
    // there keeps the adaptive loop from wasting panels on the flat tail.
    let knee = (40.0 / y).sqrt().min(PI);
    let f = |phi: f64| (y * (phi.cos() - 1.0)).exp();
    let head = integrate(f, 0.0, knee, TOL);
    let tail = integrate(f, knee, PI, Tolerance::new(1e-17 * head.value, 5e-14));
    (head.value + tail.value) / PI
}

/// ln I0(y) without overflow.
pub fn ln_i0(y: f64) -> f64 {
    y.abs() + i0_scaled(y).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_one() {
        assert_eq!(i0(0.0), 1.0);
        assert_eq!(i0_scaled(0.0), 1.0);
    }

    #[test]
    fn known_values() {
        // Power series sum_k (y/2)^{2k}/(k!)^2 evaluated independently.
        let series = |y: f64| {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..200 {
                term *= (y / 2.0).powi(2) / (k as f64).powi(2);
                sum += term;
            }
            sum
        };
        for y in [0.1, 1.0, 2.5, 10.0, 29.0, 31.0, 60.0] {
            let rel = (i0(y) - series(y)).abs() / series(y);
            assert!(rel < 1e-13, "y={y} rel={rel}");
        }
        assert!((i0(1.0) - 1.266_065_877_8).abs() < 1e-9);
    }

    #[test]
    fn scaled_large_argument() {
        assert!((i0_scaled(50.0) - 0.056_561_626_647_454).abs() < 1e-12);
        // Leading asymptotics 1/sqrt(2 pi y) (1 + 1/(8y) + 9/(128 y^2)).
        for y in [1e3, 1e4] {
            let asym = (1.0 + 1.0 / (8.0 * y) + 9.0 / (128.0 * y * y)) / (2.0 * PI * y).sqrt();
            assert!(((i0_scaled(y) - asym) / asym).abs() < 1e-8, "y={y}");
        }
    }

    #[test]
    fn branches_meet_at_switch() {
        let below = i0_scaled(SCALED_SWITCH);
        let above = i0_scaled(SCALED_SWITCH * (1.0 + 1e-12));
        assert!((below - above).abs() / below < 1e-11);
    }
}
