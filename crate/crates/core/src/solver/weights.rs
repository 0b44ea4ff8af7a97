use super::SolverError;

/// `exp(−θ·|r − r′|)`: one for identical radiance along both light paths,
/// decaying as the paths see different reflected radiance.
#[inline]
pub fn pb_weight(radiance: f64, radiance_other: f64, theta: f64) -> f64 {
    (-theta * (radiance - radiance_other).abs()).exp()
}

/// Student-t IRLS weight `(ν + 1) / (ν + (x/σ)²)`.
pub fn tdist_weight(residual_norm: f64, nu: f64, sigma: f64) -> Result<f64, SolverError> {
    if !(sigma > 0.0) {
        return Err(SolverError::NonPositiveScale(sigma));
    }
    if !(nu > 0.0) {
        return Err(SolverError::InvalidConfig(format!(
            "t-distribution dof {nu} must be > 0"
        )));
    }
    let z = residual_norm / sigma;
    Ok((nu + 1.0) / (nu + z * z))
}

/// Robust scale `1.4826 · median(|x|)`.
pub fn mad_scale(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let mid = a.len() / 2;
    let (_, m, _) = a.select_nth_unstable_by(mid, f64::total_cmp);
    1.4826 * *m
}

/// Huber cost scaled to match `r²` inside the threshold; `delta = 0` gives `r²`.
#[inline]
pub fn huber_cost(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if delta <= 0.0 || a <= delta {
        r * r
    } else {
        2.0 * delta * a - delta * delta
    }
}

/// IRLS weight of [`huber_cost`].
#[inline]
pub fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if delta <= 0.0 || a <= delta {
        1.0
    } else {
        delta / a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pb_weight_values() {
        assert_eq!(pb_weight(0.3, 0.3, 14.6), 1.0);
        assert!((pb_weight(0.5, 0.4, 14.6) - 0.2322).abs() < 5e-5);
        assert_eq!(pb_weight(0.0, 50.0, 0.0), 1.0);
    }

    #[test]
    fn tdist_values() {
        assert!((tdist_weight(0.0, 5.0, 0.1).unwrap() - 1.2).abs() < 1e-15);
        assert!((tdist_weight(0.1, 5.0, 0.1).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            tdist_weight(1.0, 5.0, 0.0),
            Err(SolverError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn huber_matches_square_inside() {
        assert!((huber_cost(0.05, 0.1) - 0.0025).abs() < 1e-15);
        assert!((huber_cost(0.3, 0.1) - 0.05).abs() < 1e-15);
        assert!((huber_cost(0.3, 0.0) - 0.09).abs() < 1e-15);
        assert_eq!(huber_weight(-0.4, 0.1), 0.25);
    }

    proptest! {
        #[test]
        fn pb_weight_in_unit_interval(r in 0.0f64..10.0, rp in 0.0f64..10.0, theta in 0.0f64..100.0) {
            let w = pb_weight(r, rp, theta);
            prop_assert!(w > 0.0 || (theta * (r - rp).abs()) > 700.0);
            prop_assert!(w <= 1.0);
        }

        #[test]
        fn tdist_decreasing(a in 0.0f64..5.0, b in 0.0f64..5.0, sigma in 0.01f64..1.0) {
            prop_assume!(a < b);
            prop_assert!(tdist_weight(a, 5.0, sigma).unwrap() > tdist_weight(b, 5.0, sigma).unwrap());
        }
    }
}
