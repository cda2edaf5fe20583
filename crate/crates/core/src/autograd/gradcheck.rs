//! Central finite differences, the oracle for every backward rule.

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps coordinates whose true
/// gradient is (near) zero from turning rounding noise into a huge ratio.
/// With h = 1e-5 and an O(1) objective a central difference carries about
/// 1e-10 of round-off, so entries under 1e-5 are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-5;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-coordinate relative error between `analytic` and central differences of `f`.
pub fn finite_difference_check(f: impl FnMut(&[f64]) -> f64, point: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(point.len(), analytic.len());
    numeric_gradient(f, point, h)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let err = finite_difference_check(f, &[2.0, -1.0], &[4.0, 3.0], 1e-5);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |x: &[f64]| x[0] * x[0];
        assert!(finite_difference_check(f, &[2.0], &[3.0], 1e-5) > 0.2);
    }
}
