//! Standard normal helpers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF via `erfc`, so the lower tail decays to exactly 0
/// instead of cancelling through `1 - erf`.
#[inline]
pub fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `ln N(0 | mean, variance)`.
#[inline]
pub fn ln_density_at_zero(mean: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * PI * variance).ln() - mean * mean / (2.0 * variance)
}

/// Heaviside step with `theta(0) = 0`.
#[inline]
pub fn theta(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_reference_values() {
        assert_eq!(phi(0.0), 0.5);
        // Tabulated standard normal CDF values.
        assert!((phi(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((phi(-1.96) - 0.024_997_895_148_220_435).abs() < 1e-15);
        assert!((phi(-10.0) - 7.619_853_024_160_47e-24).abs() < 1e-36);
    }

    #[test]
    fn phi_lower_tail_underflows_cleanly() {
        let mut prev = phi(-30.0);
        let mut z = -30.0;
        while z > -60.0 {
            z -= 0.25;
            let p = phi(z);
            assert!(p >= 0.0 && p <= prev);
            prev = p;
        }
        assert_eq!(phi(-40.0), 0.0);
        assert_eq!(phi(40.0), 1.0);
    }

    #[test]
    fn density_matches_closed_form() {
        let (m, v): (f64, f64) = (0.3, 0.625);
        let direct = (-m * m / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        assert!((ln_density_at_zero(m, v).exp() - direct).abs() < 1e-15);
    }

    #[test]
    fn heaviside_tie() {
        assert_eq!(theta(0.0), 0.0);
        assert_eq!(theta(1e-300), 1.0);
        assert_eq!(theta(-1.0), 0.0);
    }
}
