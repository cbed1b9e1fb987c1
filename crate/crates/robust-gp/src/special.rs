//! Scalar special functions not covered by statrs.

/// Trigamma function psi'(x) for x > 0: upward recurrence into the asymptotic
/// range, then the standard Bernoulli-number series.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires x > 0");
    let mut acc = 0.0;
    let mut z = x;
    while z < 6.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/z + 1/(2 z^2) + 1/(6 z^3) - 1/(30 z^5) + 1/(42 z^7) - 1/(30 z^9)
    let series = inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 - inv2 / 30.0)));
    acc + series
}
