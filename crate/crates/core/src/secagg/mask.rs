//! Mask expansion and client-side double masking.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::SecAggError;
use crate::quantize::{FieldSpec, FieldVector};
use crate::rng::Stream;
use crate::types::ClientId;

/// Expands `seed` into `dim` uniform field elements.
///
/// The seed and modulus key a ChaCha20 keystream (counter mode); each
/// element is drawn by rejection sampling, so every party holding the seed
/// derives the same vector.
pub fn expand_mask(seed: u64, dim: usize, spec: &FieldSpec) -> FieldVector {
    let field = spec.field().expect("FieldSpec modulus must be prime");
    let mut h = Sha256::new();
    h.update(b"fedshield/mask/v1");
    h.update(seed.to_le_bytes());
    h.update(spec.modulus.to_le_bytes());
    let mut stream = Stream::from_key(h.finalize().into());
    FieldVector::from_residues((0..dim).map(|_| field.sample(&mut stream)).collect())
}

/// `+1` when `me < other`, else `-1`; the two ends of a pair disagree.
pub fn pair_sign(me: ClientId, other: ClientId) -> bool {
    me < other
}

/// `update + PRG(self_seed) + sum_j sign(me, j) PRG(seed_mj)` over `neighbors`.
pub fn client_masked_input(
    update: &FieldVector,
    self_seed: u64,
    pairwise_seeds: &BTreeMap<ClientId, u64>,
    my_id: ClientId,
    neighbors: &[ClientId],
    spec: &FieldSpec,
) -> Result<FieldVector, SecAggError> {
    let field = spec.field()?;
    let dim = update.dim();
    let mut out = update.clone();
    out.add_assign(&expand_mask(self_seed, dim, spec), &field);
    for &j in neighbors {
        let seed = *pairwise_seeds.get(&j).ok_or(SecAggError::MissingNeighborSeed(j))?;
        let mask = expand_mask(seed, dim, spec);
        if pair_sign(my_id, j) {
            out.add_assign(&mask, &field);
        } else {
            out.sub_assign(&mask, &field);
        }
    }
    Ok(out)
}
