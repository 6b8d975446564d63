//! Shamir secret sharing over a prime field.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::field::PrimeField;
use crate::rng::Stream;
use crate::types::ClientId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShamirError {
    #[error("threshold {threshold} is invalid for {holders} holders")]
    InvalidThreshold { threshold: usize, holders: usize },
    #[error("evaluation point for holder {0} does not fit the field")]
    PointOutOfRange(ClientId),
    #[error("need {needed} shares, have {available}")]
    InsufficientShares { needed: usize, available: usize },
    #[error("duplicate evaluation point {0}")]
    DuplicatePoint(u64),
}

/// One holder's evaluation of an owner's sharing polynomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Share {
    pub owner: ClientId,
    pub holder: ClientId,
    /// Evaluation point, `holder + 1`.
    pub x: u64,
    pub y: u64,
}

/// Evaluation point of `holder`.
pub fn eval_point(holder: ClientId) -> u64 {
    holder as u64 + 1
}

/// Splits `secret` with a random degree `threshold - 1` polynomial.
pub fn shamir_share(
    secret: u64,
    threshold: usize,
    owner: ClientId,
    holders: &[ClientId],
    field: &PrimeField,
    rng: &mut Stream,
) -> Result<Vec<Share>, ShamirError> {
    if threshold == 0 || threshold > holders.len() {
        return Err(ShamirError::InvalidThreshold {
            threshold,
            holders: holders.len(),
        });
    }
    let distinct: BTreeSet<_> = holders.iter().collect();
    if distinct.len() != holders.len() {
        let dup = holders.iter().find(|h| holders.iter().filter(|k| k == h).count() > 1).unwrap();
        return Err(ShamirError::DuplicatePoint(eval_point(*dup)));
    }
    if let Some(&h) = holders.iter().find(|&&h| eval_point(h) >= field.modulus()) {
        return Err(ShamirError::PointOutOfRange(h));
    }
    let mut coeffs = Vec::with_capacity(threshold);
    coeffs.push(field.reduce(secret));
    for _ in 1..threshold {
        coeffs.push(field.sample(rng));
    }
    Ok(holders
        .iter()
        .map(|&holder| {
            let x = eval_point(holder);
            // Horner evaluation.
            let y = coeffs.iter().rev().fold(0, |acc, &c| field.add(field.mul(acc, x), c));
            Share { owner, holder, x, y }
        })
        .collect())
}

/// Lagrange interpolation at zero through all given points.
pub fn interpolate_at_zero(points: &[(u64, u64)], field: &PrimeField) -> Result<u64, ShamirError> {
    let mut seen = BTreeSet::new();
    for &(x, _) in points {
        if x % field.modulus() == 0 || !seen.insert(x) {
            return Err(ShamirError::DuplicatePoint(x));
        }
    }
    let mut acc = 0;
    for (i, &(xi, yi)) in points.iter().enumerate() {
        let mut num = 1;
        let mut den = 1;
        for (j, &(xj, _)) in points.iter().enumerate() {
            if i != j {
                // L_i(0) = prod x_j / (x_j - x_i)
                num = field.mul(num, xj);
                den = field.mul(den, field.sub(xj, xi));
            }
        }
        let inv = field.inv(den).expect("distinct points give a nonzero denominator");
        acc = field.add(acc, field.mul(yi, field.mul(num, inv)));
    }
    Ok(acc)
}

/// Recovers the secret from the first `threshold` shares.
///
/// There is no integrity check: a corrupted share silently yields a wrong value.
pub fn shamir_reconstruct(shares: &[Share], threshold: usize, field: &PrimeField) -> Result<u64, ShamirError> {
    if threshold == 0 || shares.len() < threshold {
        return Err(ShamirError::InsufficientShares {
            needed: threshold,
            available: shares.len(),
        });
    }
    let points: Vec<(u64, u64)> = shares[..threshold].iter().map(|s| (s.x, s.y)).collect();
    interpolate_at_zero(&points, field)
}
