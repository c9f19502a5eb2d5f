//! Log-gamma and its first two derivatives for positive arguments.
//!
//! Each function shifts small arguments upward with the recurrence
//! `f(x) = f(x + 1) - (correction)` and evaluates an asymptotic series once
//! the argument is large enough for the truncated series to be accurate to
//! machine precision.

use std::f64::consts::PI;

const LGAMMA_SHIFT: f64 = 15.0;
const PSI_SHIFT: f64 = 10.0;

/// `ln Γ(x)` for `x > 0`. Returns NaN outside the domain.
pub fn lgamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut z = x;
    let mut prod = 1.0;
    while z < LGAMMA_SHIFT {
        prod *= z;
        z += 1.0;
    }
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    // Stirling series with Bernoulli coefficients B_{2k} / (2k (2k-1)).
    let series = zi
        * (1.0 / 12.0
            + zi2
                * (-1.0 / 360.0
                    + zi2
                        * (1.0 / 1260.0
                            + zi2
                                * (-1.0 / 1680.0
                                    + zi2
                                        * (1.0 / 1188.0
                                            + zi2 * (-691.0 / 360_360.0 + zi2 / 156.0))))));
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln() + series - prod.ln()
}

/// Digamma `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut z = x;
    let mut acc = 0.0;
    while z < PSI_SHIFT {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    let series = zi2
        * (1.0 / 12.0
            - zi2
                * (1.0 / 120.0
                    - zi2
                        * (1.0 / 252.0
                            - zi2
                                * (1.0 / 240.0
                                    - zi2
                                        * (1.0 / 132.0 - zi2 * (691.0 / 32_760.0 - zi2 / 12.0))))));
    acc + z.ln() - 0.5 * zi - series
}

/// Trigamma `ψ₁(x) = d/dx ψ(x)` for `x > 0`.
pub fn trigamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let mut z = x;
    let mut acc = 0.0;
    while z < PSI_SHIFT {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    let series = zi
        + 0.5 * zi2
        + zi * zi2
            * (1.0 / 6.0
                - zi2
                    * (1.0 / 30.0
                        - zi2
                            * (1.0 / 42.0
                                - zi2
                                    * (1.0 / 30.0
                                        - zi2
                                            * (5.0 / 66.0
                                                - zi2 * (691.0 / 2730.0 - zi2 * 7.0 / 6.0))))));
    acc + series
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn known_values() {
        assert!((lgamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
        assert!(lgamma(1.0).abs() < 1e-13);
        assert!(lgamma(2.0).abs() < 1e-13);
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-13);
        // ln(10!) = ln Γ(11)
        assert!((lgamma(11.0) - 3_628_800f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn recurrences_hold() {
        for &x in &[1e-3, 0.2, 0.9, 3.7, 12.5, 80.0] {
            assert!((lgamma(x + 1.0) - lgamma(x) - x.ln()).abs() < 1e-12 * (1.0 + lgamma(x).abs()));
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-12 * (1.0 + 1.0 / x));
            assert!((trigamma(x) - trigamma(x + 1.0) - 1.0 / (x * x)).abs() < 1e-10 * trigamma(x));
        }
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(lgamma(0.0).is_nan());
        assert!(digamma(-1.0).is_nan());
        assert!(trigamma(f64::NAN).is_nan());
    }
}
