//! Shared domain types: parameter vectors, privacy parameters, client weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("parameter vector contains a non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidPrivacy(String),
    #[error("cohort must contain at least one client with a positive sample count")]
    EmptyCohort,
}

/// Flat vector of model parameters or updates. All entries are finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TypeError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TypeError::NonFinite(i));
        }
        Ok(Self(values))
    }

    /// Wraps values without the finiteness check. Callers guarantee finiteness.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self, TypeError> {
        self.check_dim(other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TypeError> {
        self.check_dim(other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// Largest per-coordinate absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, TypeError> {
        self.check_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn check_dim(&self, other: &Self) -> Result<(), TypeError> {
        if self.dim() != other.dim() {
            return Err(TypeError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.0
    }
}

/// The (epsilon, delta, clip norm, sigma) bundle for the Gaussian mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    pub noise_scale: f64,
}

impl PrivacyParams {
    pub fn new(
        epsilon: f64,
        delta: f64,
        clip_norm: f64,
        noise_scale: f64,
    ) -> Result<Self, TypeError> {
        let p = Self {
            epsilon,
            delta,
            clip_norm,
            noise_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        let bad = |m: &str| Err(TypeError::InvalidPrivacy(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad("clip_norm must be positive");
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be positive");
        }
        Ok(())
    }
}

pub type ClientId = u32;

/// FedAvg weight of one client: `weight = sample_count / total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientWeight {
    pub client_id: ClientId,
    pub sample_count: u64,
    pub weight: f64,
}

/// Builds normalized weights for a cohort from `(client, sample_count)` pairs.
/// Zero-count clients are rejected along with empty cohorts.
pub fn cohort_weights(counts: &[(ClientId, u64)]) -> Result<Vec<ClientWeight>, TypeError> {
    if counts.is_empty() || counts.iter().any(|&(_, n)| n == 0) {
        return Err(TypeError::EmptyCohort);
    }
    let total: u64 = counts.iter().map(|&(_, n)| n).sum();
    Ok(counts
        .iter()
        .map(|&(client_id, sample_count)| ClientWeight {
            client_id,
            sample_count,
            weight: sample_count as f64 / total as f64,
        })
        .collect())
}

/// The three experiment configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// No DP, plaintext aggregation.
    Plain,
    /// No DP, secure aggregation.
    SecAggOnly,
    /// Local DP followed by secure aggregation.
    DpSecAgg,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Plain, Mode::SecAggOnly, Mode::DpSecAgg];

    /// Column header used in comparison tables.
    pub fn column_label(self) -> &'static str {
        match self {
            Mode::Plain => "DP-/SecAgg-",
            Mode::SecAggOnly => "DP-/SecAgg+",
            Mode::DpSecAgg => "DP+/SecAgg+",
        }
    }

    pub fn uses_secagg(self) -> bool {
        !matches!(self, Mode::Plain)
    }

    pub fn uses_dp(self) -> bool {
        matches!(self, Mode::DpSecAgg)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Plain => "Plain",
            Mode::SecAggOnly => "SecAggOnly",
            Mode::DpSecAgg => "DpSecAgg",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(Mode::Plain),
            "secaggonly" | "secagg" => Ok(Mode::SecAggOnly),
            "dpsecagg" | "dp" => Ok(Mode::DpSecAgg),
            _ => Err(format!(
                "unknown mode `{s}` (expected Plain, SecAggOnly or DpSecAgg)"
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            ParameterVector::new(vec![1.0, f64::NAN]),
            Err(TypeError::NonFinite(1))
        );
        assert!(ParameterVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn privacy_validation() {
        assert!(PrivacyParams::new(6.0, 1.9e-4, 7.0, 4.9).is_ok());
        let err = PrivacyParams::new(-1.0, 1.9e-4, 7.0, 4.9).unwrap_err();
        assert_eq!(err.to_string(), "epsilon must be positive");
        assert!(PrivacyParams::new(1.0, 1.0, 7.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, 0.5, 0.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, 0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn mode_round_trips_through_text() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }

    #[test]
    fn cohort_rejects_zero_counts() {
        assert!(cohort_weights(&[]).is_err());
        assert!(cohort_weights(&[(0, 3), (1, 0)]).is_err());
    }

    proptest! {
        #[test]
        fn cohort_weights_normalize(counts in proptest::collection::vec(1u64..10_000, 1..64)) {
            let pairs: Vec<_> = counts.iter().enumerate().map(|(i, &n)| (i as u32, n)).collect();
            let w = cohort_weights(&pairs).unwrap();
            let total: u64 = counts.iter().sum();
            let sum: f64 = w.iter().map(|c| c.weight).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            for c in &w {
                prop_assert_eq!(c.weight, c.sample_count as f64 / total as f64);
                prop_assert!(c.weight > 0.0 && c.weight <= 1.0);
            }
        }
    }
}
