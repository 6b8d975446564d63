//! Local differential privacy: fixed-norm clipping and Gaussian noise.
//!
//! Clipping is applied to the per-round model delta a client transmits, not
//! to per-example gradients. Noise is calibrated with the classic Gaussian
//! mechanism bound `sigma = C * sqrt(2 ln(1.25 / delta)) / epsilon`. That bound
//! is only proven for `epsilon <= 1`; callers that need a different
//! calibration set `noise_scale` directly.

use thiserror::Error;

use crate::rng::Stream;
use crate::types::{ParameterVector, PrivacyParams, TypeError};

/// Below this noise scale the noise stream is not consumed at all.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("update contains a non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("invalid privacy parameters: {0}")]
    InvalidPrivacyParams(String),
}

impl From<TypeError> for DpError {
    fn from(e: TypeError) -> Self {
        match e {
            TypeError::NonFinite(i) => DpError::NonFiniteInput(i),
            other => DpError::InvalidPrivacyParams(other.to_string()),
        }
    }
}

/// Scales `g` by `1 / max(1, |g| / C)`.
pub fn clip(g: &ParameterVector, clip_norm: f64) -> Result<ParameterVector, DpError> {
    if !(clip_norm > 0.0 && clip_norm.is_finite()) {
        return Err(DpError::InvalidPrivacyParams(
            "clip_norm must be positive".into(),
        ));
    }
    if let Some(i) = g.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(DpError::NonFiniteInput(i));
    }
    let norm = g.l2_norm();
    let divisor = (norm / clip_norm).max(1.0);
    if divisor == 1.0 {
        return Ok(g.clone());
    }
    Ok(g.scaled(1.0 / divisor))
}

/// Gaussian-mechanism noise scale for `(epsilon, delta)` at sensitivity `clip_norm`.
pub fn calibrate_sigma(epsilon: f64, delta: f64, clip_norm: f64) -> Result<f64, DpError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(DpError::InvalidPrivacyParams("epsilon must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::InvalidPrivacyParams("delta must lie in (0, 1)".into()));
    }
    if !(clip_norm > 0.0 && clip_norm.is_finite()) {
        return Err(DpError::InvalidPrivacyParams(
            "clip_norm must be positive".into(),
        ));
    }
    Ok(clip_norm * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Clips `update` to `params.clip_norm` and adds i.i.d. `N(0, sigma^2)` noise
/// drawn from `rng`, one draw per coordinate in index order.
pub fn privatize(
    update: &ParameterVector,
    params: &PrivacyParams,
    rng: &mut Stream,
) -> Result<ParameterVector, DpError> {
    // Only the noise floor is exempt from validation so the zero-noise limit
    // can be exercised.
    if params.noise_scale >= NOISE_FLOOR {
        params.validate()?;
    }
    let clipped = clip(update, params.clip_norm)?;
    if params.noise_scale < NOISE_FLOOR {
        return Ok(clipped);
    }
    let sigma = params.noise_scale;
    let noisy = clipped
        .into_inner()
        .into_iter()
        .map(|v| v + sigma * rng.normal())
        .collect();
    Ok(ParameterVector::from_vec_unchecked(noisy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::stats::ks_statistic;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(&pv(&[3.0, 4.0]), 7.0).unwrap(), pv(&[3.0, 4.0]));
        // Scale factor C / |g| = 0.7.
        let c = clip(&pv(&[6.0, 8.0]), 7.0).unwrap();
        assert!((c.as_slice()[0] - 4.2).abs() < 1e-12);
        assert!((c.as_slice()[1] - 5.6).abs() < 1e-12);
        assert_eq!(clip(&pv(&[0.0, 0.0]), 0.1).unwrap(), pv(&[0.0, 0.0]));
    }

    #[test]
    fn clip_rejects_bad_input() {
        let nan = ParameterVector::from_vec_unchecked(vec![1.0]);
        assert!(clip(&nan, 0.0).is_err());
        assert!(clip(&pv(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn sigma_for_default_parameters() {
        // 7 * sqrt(2 ln(1.25 / 1.9e-4)) / 6 at 30 digits (mpmath).
        let s = calibrate_sigma(6.0, 1.9e-4, 7.0).unwrap();
        assert!((s - 4.892_113_107_502_625).abs() < 1e-9, "{s}");
    }

    #[test]
    fn sigma_scaling() {
        let base = calibrate_sigma(6.0, 1.9e-4, 7.0).unwrap();
        let c2 = calibrate_sigma(6.0, 1.9e-4, 14.0).unwrap();
        let e2 = calibrate_sigma(3.0, 1.9e-4, 7.0).unwrap();
        assert!((c2 - 2.0 * base).abs() < 1e-12);
        assert!((e2 - 2.0 * base).abs() < 1e-12);
        assert!(calibrate_sigma(0.0, 0.1, 1.0).is_err());
        assert!(calibrate_sigma(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_noise_limit_is_clip() {
        let p = PrivacyParams {
            epsilon: 6.0,
            delta: 1.9e-4,
            clip_norm: 7.0,
            noise_scale: 0.0,
        };
        let u = pv(&[30.0, 40.0, 0.0]);
        let mut rng = seeded_rng(0, "dp");
        assert_eq!(privatize(&u, &p, &mut rng).unwrap(), clip(&u, 7.0).unwrap());
    }

    #[test]
    fn privatize_is_deterministic_under_stream() {
        let p = PrivacyParams::new(6.0, 1.9e-4, 7.0, 4.892).unwrap();
        let u = pv(&[1.0, -2.0, 0.5]);
        let a = privatize(&u, &p, &mut seeded_rng(9, "dp")).unwrap();
        let b = privatize(&u, &p, &mut seeded_rng(9, "dp")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_moments() {
        // 1e5 privatizations of a 2-coordinate update. Mean oracle: CLT bound
        // 4 sigma / sqrt(n). Variance oracle: sd of the sample variance is
        // sigma^2 sqrt(2 / n) ~ 0.45%, so 5% is far outside sampling error.
        let sigma = 2.0;
        let p = PrivacyParams::new(1.0, 1e-5, 1.0, sigma).unwrap();
        let u = pv(&[3.0, 4.0]);
        let clipped = clip(&u, 1.0).unwrap();
        let n = 100_000;
        let mut rng = seeded_rng(11, "dp/moments");
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let out = privatize(&u, &p, &mut rng).unwrap();
            for k in 0..2 {
                let d = out.as_slice()[k];
                sums[k] += d;
                sq[k] += d * d;
            }
        }
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let target = clipped.as_slice()[k];
            assert!((mean - target).abs() <= 4.0 * sigma / (n as f64).sqrt());
            assert!((var / (sigma * sigma) - 1.0).abs() <= 0.05, "var {var}");
        }
    }

    #[test]
    fn noise_passes_ks() {
        let sigma = calibrate_sigma(6.0, 1.9e-4, 7.0).unwrap();
        let p = PrivacyParams::new(6.0, 1.9e-4, 7.0, sigma).unwrap();
        let u = ParameterVector::zeros(10_000);
        let out = privatize(&u, &p, &mut seeded_rng(3, "dp/ks")).unwrap();
        let normal = Normal::new(0.0, sigma).unwrap();
        let d = ks_statistic(out.as_slice(), |x| normal.cdf(x));
        assert!(d < 0.02, "KS {d}");
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(v in proptest::collection::vec(-1e3f64..1e3, 1..256), c in 1e-3f64..100.0) {
            let g = pv(&v);
            let out = clip(&g, c).unwrap();
            prop_assert!(out.l2_norm() <= c + 1e-9);
            if g.l2_norm() <= c {
                prop_assert_eq!(out, g);
            }
        }

        #[test]
        fn clip_is_positively_homogeneous(v in proptest::collection::vec(-50.0f64..50.0, 1..64), c in 0.1f64..20.0, lambda in 0.01f64..100.0) {
            let g = pv(&v);
            let lhs = clip(&g.scaled(lambda), lambda * c).unwrap();
            let rhs = clip(&g, c).unwrap().scaled(lambda);
            for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}
