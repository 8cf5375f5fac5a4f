//! Huber penalty and reweighting helpers.

/// Huber penalty: `r^2 / 2` for `|r| <= delta`, `delta * (|r| - delta / 2)` beyond.
#[inline]
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to `r`.
#[inline]
pub fn huber_derivative(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

/// IRLS weight `rho'(r) / r`.
#[inline]
pub fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// Median of `values`; `None` when empty. NaNs sort last.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Some(*m)
}

/// Huber threshold as a multiple of the median absolute residual, floored
/// so that exact fits do not produce a zero threshold.
pub fn adaptive_threshold(residuals: &[f64], multiple: f64, floor: f64) -> f64 {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    median(&mut abs).map_or(floor, |m| (multiple * m).max(floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadratic_below_threshold() {
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 2.0), 2.0);
        assert_eq!(huber(3.0, 1.0), 2.5);
        assert_eq!(huber(-3.0, 1.0), 2.5);
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(3.0));
        assert_eq!(median(&mut []), None);
        assert_eq!(adaptive_threshold(&[0.0, 0.0], 2.0, 1e-9), 1e-9);
    }

    proptest! {
        #[test]
        fn huber_is_c1_at_threshold(delta in 0.01f64..50.0) {
            let eps = 1e-7 * delta;
            let below = huber(delta - eps, delta);
            let above = huber(delta + eps, delta);
            prop_assert!((above - below).abs() <= 3.0 * delta * eps);
            let d_below = huber_derivative(delta - eps, delta);
            let d_above = huber_derivative(delta + eps, delta);
            prop_assert!((d_above - d_below).abs() <= 2.0 * eps);
        }

        #[test]
        fn derivative_matches_finite_difference(r in -100.0f64..100.0, delta in 0.1f64..20.0) {
            prop_assume!((r.abs() - delta).abs() > 1e-3);
            let h = 1e-6;
            let fd = (huber(r + h, delta) - huber(r - h, delta)) / (2.0 * h);
            prop_assert!((fd - huber_derivative(r, delta)).abs() < 1e-6 * (1.0 + r.abs()));
        }
    }
}
