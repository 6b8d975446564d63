//! Pairwise key material: dealt directly, or agreed with finite-field
//! Diffie-Hellman over the 2048-bit MODP group of RFC 3526.

use std::sync::OnceLock;

use num_bigint::BigUint;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::PrimeField;
use crate::rng::{seeded_rng, Stream};
use crate::types::ClientId;

const MODP_2048_HEX: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DD\
EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F\
83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510\
15728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// Byte length of an encoded group element.
pub const ELEMENT_BYTES: usize = 256;
const SECRET_BYTES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error("public key from client {0} is outside (1, p - 1)")]
    InvalidPublicKey(ClientId),
    #[error("advertisement from client {client} has {len} bytes, expected {expected}")]
    BadAdvertisement { client: ClientId, len: usize, expected: usize },
}

/// How clients obtain pairwise secrets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyMode {
    /// A trusted dealer hands each pair its secrets.
    #[default]
    Dealer,
    /// Clients advertise public keys and run Diffie-Hellman.
    Agreement,
}

impl std::str::FromStr for KeyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dealer" => Ok(KeyMode::Dealer),
            "agreement" | "dh" => Ok(KeyMode::Agreement),
            _ => Err(format!("unknown key mode `{s}`")),
        }
    }
}

/// What two neighbors share: the seed of their pairwise mask and the key
/// sealing share bundles between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairKeys {
    pub mask_seed: u64,
    pub channel_key: [u8; 32],
}

/// Dealer mode: secrets for the unordered pair `{a, b}`.
pub fn dealer_pair_keys(seed: u64, round_id: u32, a: ClientId, b: ClientId, field: &PrimeField) -> PairKeys {
    let (lo, hi) = (a.min(b), a.max(b));
    let mut rng = seeded_rng(seed, format!("secagg/round/{round_id}/dealer/{lo}/{hi}"));
    let mask_seed = field.sample(&mut rng);
    let mut channel_key = [0u8; 32];
    rng.fill_bytes(&mut channel_key);
    PairKeys { mask_seed, channel_key }
}

pub fn modp_prime() -> &'static BigUint {
    static P: OnceLock<BigUint> = OnceLock::new();
    P.get_or_init(|| BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("valid hex"))
}

fn generator() -> BigUint {
    BigUint::from(2u32)
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    secret: BigUint,
    pub public: BigUint,
}

impl KeyPair {
    /// 256-bit secret exponent.
    pub fn generate(rng: &mut Stream) -> Self {
        let mut bytes = [0u8; SECRET_BYTES];
        rng.fill_bytes(&mut bytes);
        let secret = BigUint::from_bytes_be(&bytes) | BigUint::from(2u32);
        let public = generator().modpow(&secret, modp_prime());
        Self { secret, public }
    }

    /// Shared group element with `peer`'s public key.
    pub fn agree(&self, peer: ClientId, peer_public: &BigUint) -> Result<BigUint, KeyError> {
        let p = modp_prime();
        let one = BigUint::from(1u32);
        if peer_public <= &one || peer_public >= &(p - &one) {
            return Err(KeyError::InvalidPublicKey(peer));
        }
        Ok(peer_public.modpow(&self.secret, p))
    }
}

/// A client's two key pairs: one for the share channel, one for masks.
#[derive(Clone, Debug)]
pub struct ClientKeys {
    pub channel: KeyPair,
    pub mask: KeyPair,
}

impl ClientKeys {
    pub fn generate(rng: &mut Stream) -> Self {
        Self {
            channel: KeyPair::generate(rng),
            mask: KeyPair::generate(rng),
        }
    }

    /// `channel_public || mask_public`, each big-endian and zero-padded.
    pub fn advertisement(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 * ELEMENT_BYTES);
        out.extend(pad(&self.channel.public));
        out.extend(pad(&self.mask.public));
        out
    }

    pub fn pair_keys(&self, peer: ClientId, ad: &Advertisement, field: &PrimeField) -> Result<PairKeys, KeyError> {
        let c = self.channel.agree(peer, &ad.channel)?;
        let m = self.mask.agree(peer, &ad.mask)?;
        let mut rng = Stream::from_key(digest(b"fedshield/pairseed/v1", &m));
        Ok(PairKeys {
            mask_seed: field.sample(&mut rng),
            channel_key: digest(b"fedshield/channel/v1", &c),
        })
    }
}

/// Public keys advertised by one client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Advertisement {
    pub channel: BigUint,
    pub mask: BigUint,
}

impl Advertisement {
    pub fn parse(client: ClientId, bytes: &[u8]) -> Result<Self, KeyError> {
        if bytes.len() != 2 * ELEMENT_BYTES {
            return Err(KeyError::BadAdvertisement {
                client,
                len: bytes.len(),
                expected: 2 * ELEMENT_BYTES,
            });
        }
        Ok(Self {
            channel: BigUint::from_bytes_be(&bytes[..ELEMENT_BYTES]),
            mask: BigUint::from_bytes_be(&bytes[ELEMENT_BYTES..]),
        })
    }
}

fn pad(x: &BigUint) -> Vec<u8> {
    let raw = x.to_bytes_be();
    let mut out = vec![0u8; ELEMENT_BYTES - raw.len()];
    out.extend(raw);
    out
}

fn digest(domain: &[u8], x: &BigUint) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(domain);
    h.update(pad(x));
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MERSENNE_61;

    /// Fermat test to base `a`, enough to catch a mistyped constant.
    fn fermat(n: &BigUint, a: u32) -> bool {
        BigUint::from(a).modpow(&(n - 1u32), n) == BigUint::from(1u32)
    }

    #[test]
    fn group_is_a_safe_prime_of_the_right_size() {
        let p = modp_prime();
        assert_eq!(p.bits(), 2048);
        let q: BigUint = (p - 1u32) >> 1;
        for a in [2, 3, 5, 7] {
            assert!(fermat(p, a));
            assert!(fermat(&q, a));
        }
    }

    #[test]
    fn agreement_is_symmetric() {
        let field = PrimeField::new(MERSENNE_61).unwrap();
        let a = ClientKeys::generate(&mut seeded_rng(1, "a"));
        let b = ClientKeys::generate(&mut seeded_rng(1, "b"));
        let ad_a = Advertisement::parse(0, &a.advertisement()).unwrap();
        let ad_b = Advertisement::parse(1, &b.advertisement()).unwrap();
        let ab = a.pair_keys(1, &ad_b, &field).unwrap();
        let ba = b.pair_keys(0, &ad_a, &field).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.mask_seed < MERSENNE_61);
        assert_ne!(ab.channel_key, [0u8; 32]);
    }

    #[test]
    fn degenerate_public_keys_rejected() {
        let k = KeyPair::generate(&mut seeded_rng(2, "k"));
        let p = modp_prime();
        for bad in [BigUint::from(0u32), BigUint::from(1u32), p - 1u32, p.clone()] {
            assert_eq!(k.agree(5, &bad), Err(KeyError::InvalidPublicKey(5)));
        }
        assert!(k.agree(5, &BigUint::from(2u32)).is_ok());
        assert!(k.agree(5, &(p - 2u32)).is_ok());
    }

    #[test]
    fn dealer_keys_are_symmetric_and_round_bound() {
        let field = PrimeField::new(MERSENNE_61).unwrap();
        assert_eq!(dealer_pair_keys(9, 0, 2, 5, &field), dealer_pair_keys(9, 0, 5, 2, &field));
        assert_ne!(dealer_pair_keys(9, 0, 2, 5, &field), dealer_pair_keys(9, 1, 2, 5, &field));
    }

    #[test]
    fn advertisement_length_checked() {
        assert!(matches!(
            Advertisement::parse(3, &[0u8; 10]),
            Err(KeyError::BadAdvertisement { client: 3, .. })
        ));
    }
}
