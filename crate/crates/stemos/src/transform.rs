//! Box-Cox transformation family and the censored link between the observed
//! wind field Y and the latent Gaussian field X:
//!
//!   Y = BC^{-1}(X, lambda)  when X > c_bar,    Y = c  when X <= c_bar,
//!
//! with c_bar = BC(c, lambda) the censor threshold on the latent scale.

use crate::domain::{ObsStatus, ObservationPanel};

/// Box-Cox transform of a positive value: `(y^l - 1)/l` for `l != 0`,
/// `log y` at `l = 0`. Uses `exp_m1` so the small-lambda regime stays
/// accurate instead of cancelling.
pub fn box_cox(y: f64, lambda: f64) -> f64 {
    assert!(y > 0.0, "box_cox requires y > 0, got {y}");
    if lambda == 0.0 {
        y.ln()
    } else {
        (lambda * y.ln()).exp_m1() / lambda
    }
}

/// Inverse Box-Cox. Returns `None` when the argument falls outside the
/// transform's support (`lambda*x + 1 <= 0`); callers map that region to the
/// censored value.
pub fn box_cox_inverse(x: f64, lambda: f64) -> Option<f64> {
    if lambda == 0.0 {
        return Some(x.exp());
    }
    let u = lambda * x;
    if u <= -1.0 {
        return None;
    }
    Some((u.ln_1p() / lambda).exp())
}

/// Censor threshold on the latent scale. `c = 0` is taken as the limit
/// c -> 0+ of BC(c, lambda): `-1/lambda` for positive lambda, `-inf`
/// otherwise (no censor mass).
pub fn censored_threshold(c: f64, lambda: f64) -> f64 {
    assert!(c >= 0.0, "censor threshold must be >= 0, got {c}");
    if c > 0.0 {
        box_cox(c, lambda)
    } else if lambda > 0.0 {
        -1.0 / lambda
    } else {
        f64::NEG_INFINITY
    }
}

/// Back-transform a latent value to the observed scale, applying the censor
/// floor: latent mass at or below the threshold (including the
/// out-of-support region) collapses to exactly `c`.
pub fn to_observed(x: f64, lambda: f64, c: f64) -> f64 {
    let c_bar = censored_threshold(c, lambda);
    if x <= c_bar {
        return c;
    }
    match box_cox_inverse(x, lambda) {
        Some(y) if y > c => y,
        _ => c,
    }
}

/// Sum of log y over uncensored, non-missing cells: the data part of the
/// transformation Jacobian, reusable across lambda proposals.
pub fn sum_log_uncensored(panel: &ObservationPanel) -> f64 {
    let mut s = 0.0;
    for t in 0..panel.t_len() {
        for i in 0..panel.n_sites() {
            if panel.status(t, i) == ObsStatus::Observed {
                s += panel.values[(t, i)].ln();
            }
        }
    }
    s
}

/// Log Jacobian of the Box-Cox change of variables over uncensored cells:
/// `(lambda - 1) * sum log y`.
pub fn jacobian_log_term(lambda: f64, sum_log_y_uncensored: f64) -> f64 {
    (lambda - 1.0) * sum_log_y_uncensored
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::{TimeZone, Utc};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_relative_eq!(box_cox(4.0, 0.5), 2.0, epsilon = 1e-12);
        assert_relative_eq!(box_cox(std::f64::consts::E, 0.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(box_cox(7.3, 1.0), 6.3, epsilon = 1e-12);
        assert_relative_eq!(box_cox_inverse(2.0, 0.5).unwrap(), 4.0, epsilon = 1e-12);
        assert_eq!(box_cox_inverse(-3.0, 0.5), None);
        for lambda in [-1.0, -0.3, 0.0, 0.5, 2.0] {
            assert_relative_eq!(box_cox_inverse(0.0, lambda).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn censor_threshold_cases() {
        assert_relative_eq!(censored_threshold(1.0, 0.5), 0.0, epsilon = 1e-12);
        assert_relative_eq!(censored_threshold(0.5, 0.0), 0.5f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(censored_threshold(0.0, 0.5), -2.0, epsilon = 1e-12);
        // The c = 0 branch is the analytic c -> 0+ limit.
        assert_relative_eq!(
            censored_threshold(0.0, 0.5),
            box_cox(1e-8, 0.5),
            epsilon = 1e-3
        );
        assert_eq!(censored_threshold(0.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(censored_threshold(0.0, -0.5), f64::NEG_INFINITY);
    }

    #[test]
    fn continuity_at_zero_lambda() {
        for &y in &[0.1, 0.5, 1.0, 2.0, 10.0, 50.0] {
            let yf: f64 = y;
            assert!((box_cox(y, 1e-8) - yf.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn jacobian_examples() {
        let times = vec![Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()];
        let panel = ObservationPanel::new(
            times,
            DMatrix::from_row_slice(1, 2, &[2.0, 4.0]),
            vec![ObsStatus::Observed, ObsStatus::Observed],
            0.0,
        )
        .unwrap();
        let s = sum_log_uncensored(&panel);
        assert_relative_eq!(
            jacobian_log_term(0.5, s),
            -0.5 * (2.0f64.ln() + 4.0f64.ln()),
            epsilon = 1e-12
        );
        assert_eq!(jacobian_log_term(1.0, s), 0.0);
        // All cells censored: empty product.
        let times = vec![Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()];
        let censored = ObservationPanel::new(
            times,
            DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
            vec![ObsStatus::CensoredAtC, ObsStatus::CensoredAtC],
            0.0,
        )
        .unwrap();
        assert_eq!(sum_log_uncensored(&censored), 0.0);
    }

    proptest! {
        #[test]
        fn round_trip(y in 0.01f64..100.0, lam_idx in 0usize..7) {
            let lambda = [-1.0, -0.5, 0.0, 0.3, 0.5, 1.0, 2.0][lam_idx];
            let back = box_cox_inverse(box_cox(y, lambda), lambda).unwrap();
            prop_assert!((back - y).abs() / y < 1e-10);
        }

        #[test]
        fn monotone_in_y(a in 0.01f64..100.0, gap in 0.001f64..10.0, lam_idx in 0usize..7) {
            let lambda = [-1.0, -0.5, 0.0, 0.3, 0.5, 1.0, 2.0][lam_idx];
            prop_assert!(box_cox(a + gap, lambda) > box_cox(a, lambda));
        }
    }
}
