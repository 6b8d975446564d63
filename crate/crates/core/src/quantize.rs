//! Fixed-point encoding of real vectors into residues modulo a prime.
//!
//! A coordinate `x` is clamped to `[-clamp_range, clamp_range]`, scaled by a
//! power of two, rounded to nearest (ties to even) and reduced mod `p`, with
//! negatives mapping to `p - |v|`. Decoding applies the centered lift, so
//! the sum of up to `K` encodings decodes to the real sum within `K / (2 scale)`
//! as long as the total magnitude stays inside the `(-p/2, p/2)` window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{PrimeField, MERSENNE_61};
use crate::types::ParameterVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("modulus {0} is not a prime below 2^63")]
    NotPrime(u64),
    #[error("scale {0} is not a power of two")]
    ScaleNotPowerOfTwo(u64),
    #[error("clamp_range must be positive and finite")]
    BadClamp,
    #[error("summing weight {weight} at clamp {clamp} and scale {scale} can wrap modulus {modulus}")]
    Wraparound {
        weight: u64,
        clamp: f64,
        scale: u64,
        modulus: u64,
    },
    #[error("truncated field vector: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("residue {residue} at index {index} is not below the modulus")]
    ResidueOutOfRange { index: usize, residue: u64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Encoding parameters shared by every party in a round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub modulus: u64,
    pub scale: u64,
    pub clamp_range: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            modulus: MERSENNE_61,
            scale: 1 << 16,
            clamp_range: 256.0,
        }
    }
}

impl FieldSpec {
    pub fn field(&self) -> Result<PrimeField, QuantizeError> {
        PrimeField::new(self.modulus).ok_or(QuantizeError::NotPrime(self.modulus))
    }

    /// Checks primality, the power-of-two scale, and that a weighted sum whose
    /// integer weights total `total_weight` cannot leave the centered window.
    pub fn validate(&self, total_weight: u64) -> Result<(), QuantizeError> {
        self.field()?;
        if !self.scale.is_power_of_two() {
            return Err(QuantizeError::ScaleNotPowerOfTwo(self.scale));
        }
        if !(self.clamp_range > 0.0 && self.clamp_range.is_finite()) {
            return Err(QuantizeError::BadClamp);
        }
        let span = 2.0 * total_weight as f64 * self.scale as f64 * self.clamp_range;
        if span >= self.modulus as f64 {
            return Err(QuantizeError::Wraparound {
                weight: total_weight,
                clamp: self.clamp_range,
                scale: self.scale,
                modulus: self.modulus,
            });
        }
        Ok(())
    }

    /// Worst-case per-coordinate rounding error of a single encoding.
    pub fn half_step(&self) -> f64 {
        0.5 / self.scale as f64
    }
}

/// Residues in `[0, modulus)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldVector {
    residues: Vec<u64>,
}

impl FieldVector {
    pub fn new(residues: Vec<u64>, modulus: u64) -> Result<Self, QuantizeError> {
        if let Some((index, &residue)) = residues.iter().enumerate().find(|(_, &r)| r >= modulus) {
            return Err(QuantizeError::ResidueOutOfRange { index, residue });
        }
        Ok(Self { residues })
    }

    pub(crate) fn from_residues(residues: Vec<u64>) -> Self {
        Self { residues }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            residues: vec![0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.residues.len()
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn into_residues(self) -> Vec<u64> {
        self.residues
    }

    pub fn add_assign(&mut self, other: &FieldVector, field: &PrimeField) {
        assert_eq!(self.dim(), other.dim(), "field vector dims differ");
        for (a, &b) in self.residues.iter_mut().zip(&other.residues) {
            *a = field.add(*a, b);
        }
    }

    pub fn sub_assign(&mut self, other: &FieldVector, field: &PrimeField) {
        assert_eq!(self.dim(), other.dim(), "field vector dims differ");
        for (a, &b) in self.residues.iter_mut().zip(&other.residues) {
            *a = field.sub(*a, b);
        }
    }

    /// Multiplies every residue by the integer `k`.
    pub fn scale_by(&self, k: u64, field: &PrimeField) -> FieldVector {
        let k = field.reduce(k);
        Self {
            residues: self.residues.iter().map(|&r| field.mul(r, k)).collect(),
        }
    }

    /// Wire layout: `dim` as u32 LE followed by `dim` u64 LE residues.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.dim());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for r in &self.residues {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out
    }

    /// Parses the wire layout; returns the vector and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), QuantizeError> {
        if bytes.len() < 4 {
            return Err(QuantizeError::Truncated {
                need: 4,
                have: bytes.len(),
            });
        }
        let dim = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let need = 4 + 8 * dim;
        if bytes.len() < need {
            return Err(QuantizeError::Truncated {
                need,
                have: bytes.len(),
            });
        }
        let residues = bytes[4..need]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self { residues }, need))
    }
}

/// Encodes `v`, returning the vector and the number of clamped coordinates.
pub fn encode_counting(v: &ParameterVector, spec: &FieldSpec) -> (FieldVector, usize) {
    let field = spec.field().expect("FieldSpec modulus must be prime");
    let scale = spec.scale as f64;
    let mut saturated = 0;
    let residues = v
        .as_slice()
        .iter()
        .map(|&x| {
            if x.abs() > spec.clamp_range {
                saturated += 1;
            }
            let x = x.clamp(-spec.clamp_range, spec.clamp_range);
            field.from_i64((x * scale).round_ties_even() as i64)
        })
        .collect();
    (FieldVector { residues }, saturated)
}

pub fn encode(v: &ParameterVector, spec: &FieldSpec) -> FieldVector {
    encode_counting(v, spec).0
}

/// Decodes a residue vector holding the sum of `num_summands` encodings.
///
/// The summand count does not change the arithmetic; it bounds the
/// expected magnitude and is checked in debug builds.
pub fn decode(fv: &FieldVector, spec: &FieldSpec, num_summands: usize) -> ParameterVector {
    debug_assert!(num_summands >= 1);
    let field = spec.field().expect("FieldSpec modulus must be prime");
    let scale = spec.scale as f64;
    ParameterVector::from_vec_unchecked(
        fv.residues
            .iter()
            .map(|&r| field.centered(r) as f64 / scale)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn encode_examples() {
        let spec = FieldSpec::default();
        let fv = encode(&pv(&[0.0, 1.0, -1.0]), &spec);
        assert_eq!(fv.residues(), &[0, 65536, (1u64 << 61) - 1 - 65536]);
    }

    #[test]
    fn dyadic_values_round_trip_exactly() {
        let spec = FieldSpec::default();
        let d = decode(&encode(&pv(&[-0.5, 0.25, 3.0]), &spec), &spec, 1);
        assert_eq!(d.as_slice(), &[-0.5, 0.25, 3.0]);
    }

    #[test]
    fn nearest_rounding_ties_to_even() {
        let spec = FieldSpec {
            scale: 1,
            ..FieldSpec::default()
        };
        let fv = encode(&pv(&[0.5, 1.5, 2.5, -0.5]), &spec);
        assert_eq!(fv.residues(), &[0, 2, 2, 0]);
    }

    #[test]
    fn clamping_is_counted() {
        let spec = FieldSpec::default();
        let (fv, sat) = encode_counting(&pv(&[300.0, -1000.0, 5.0]), &spec);
        assert_eq!(sat, 2);
        let d = decode(&fv, &spec, 1);
        assert_eq!(d.as_slice(), &[256.0, -256.0, 5.0]);
    }

    #[test]
    fn default_spec_has_room_for_64_clients() {
        let spec = FieldSpec::default();
        assert!(spec.validate(64).is_ok());
        assert!(matches!(
            spec.validate(1 << 40),
            Err(QuantizeError::Wraparound { .. })
        ));
        let bad = FieldSpec {
            scale: 3,
            ..spec
        };
        assert_eq!(bad.validate(1), Err(QuantizeError::ScaleNotPowerOfTwo(3)));
        let bad = FieldSpec {
            modulus: 91,
            ..spec
        };
        assert_eq!(bad.validate(1), Err(QuantizeError::NotPrime(91)));
    }

    #[test]
    fn sum_of_encodings_decodes_to_real_sum() {
        // Oracle: each encoding errs by at most half a step, so K summands err
        // by at most K/(2 scale) (triangle inequality).
        let spec = FieldSpec::default();
        let field = spec.field().unwrap();
        let mut rng = seeded_rng(5, "quantize/sum");
        for k in 1..=20usize {
            let dim = 64;
            let mut acc = FieldVector::zeros(dim);
            let mut real = vec![0.0; dim];
            for _ in 0..k {
                let v: Vec<f64> = (0..dim).map(|_| (rng.uniform() - 0.5) * 2.0 * 255.0).collect();
                for (r, x) in real.iter_mut().zip(&v) {
                    *r += x;
                }
                acc.add_assign(&encode(&pv(&v), &spec), &field);
            }
            let d = decode(&acc, &spec, k);
            let bound = k as f64 * spec.half_step();
            for (a, b) in d.as_slice().iter().zip(&real) {
                assert!((a - b).abs() <= bound + 1e-12, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn wire_layout() {
        let fv = FieldVector::new(vec![1, 2, 3], 97).unwrap();
        let bytes = fv.to_bytes();
        assert_eq!(&bytes[..4], &3u32.to_le_bytes());
        assert_eq!(&bytes[4..12], &1u64.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 24);
        let (back, used) = FieldVector::from_bytes(&bytes).unwrap();
        assert_eq!(back, fv);
        assert_eq!(used, bytes.len());
        assert!(FieldVector::from_bytes(&bytes[..10]).is_err());
        assert!(FieldVector::new(vec![97], 97).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(xs in proptest::collection::vec(-256.0f64..=256.0, 1..64)) {
            let spec = FieldSpec::default();
            let v = pv(&xs);
            let d = decode(&encode(&v, &spec), &spec, 1);
            for (a, b) in d.as_slice().iter().zip(&xs) {
                prop_assert!((a - b).abs() <= 2f64.powi(-17));
            }
        }

        #[test]
        fn wire_round_trip(rs in proptest::collection::vec(0u64..(1u64 << 61) - 1, 0..32)) {
            let fv = FieldVector::new(rs, (1u64 << 61) - 1).unwrap();
            let (back, _) = FieldVector::from_bytes(&fv.to_bytes()).unwrap();
            prop_assert_eq!(back, fv);
        }
    }
}
