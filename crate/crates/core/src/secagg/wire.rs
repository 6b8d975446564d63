//! Message envelopes and share records as they travel through the server.
//!
//! Envelope layout (little-endian): `round_id u32 | phase u8 | sender u32 |
//! receiver u32 | payload_len u32 | payload`. A share record is
//! `kind u8 | peer u32 | owner u32 | x u64 | y u64`; the `kind`/`peer`
//! prefix names which of the owner's secrets the `(owner, x, y)` share
//! belongs to.

use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::shamir::Share;
use crate::rng::Stream;
use crate::types::ClientId;

/// Receiver/sender id of the aggregation server.
pub const SERVER_ID: ClientId = u32::MAX;

const ENVELOPE_HEADER: usize = 4 + 1 + 4 + 4 + 4;
const SHARE_RECORD: usize = 1 + 4 + 4 + 8 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("truncated {what}: need {need} bytes, have {have}")]
    Truncated { what: &'static str, need: usize, have: usize },
    #[error("unknown phase tag {0}")]
    UnknownPhase(u8),
    #[error("unknown secret kind {0}")]
    UnknownSecretKind(u8),
}

/// Client-visible protocol phases, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Advertise = 0,
    ShareKeys = 1,
    MaskedInput = 2,
    Unmask = 3,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Advertise, Phase::ShareKeys, Phase::MaskedInput, Phase::Unmask];

    pub fn from_u8(tag: u8) -> Result<Phase, WireError> {
        Phase::ALL
            .get(tag as usize)
            .copied()
            .ok_or(WireError::UnknownPhase(tag))
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Advertise => "Advertise",
            Phase::ShareKeys => "ShareKeys",
            Phase::MaskedInput => "MaskedInput",
            Phase::Unmask => "Unmask",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown phase `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub round_id: u32,
    pub phase: Phase,
    pub sender: ClientId,
    pub receiver: ClientId,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.round_id.to_le_bytes());
        out.push(self.phase as u8);
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&self.receiver.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ENVELOPE_HEADER + self.payload.len());
        self.encode_into(&mut out);
        out
    }

    /// Decodes one envelope; returns it with the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Envelope, usize), WireError> {
        if bytes.len() < ENVELOPE_HEADER {
            return Err(WireError::Truncated {
                what: "envelope header",
                need: ENVELOPE_HEADER,
                have: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let phase = Phase::from_u8(bytes[4])?;
        let len = u32_at(13) as usize;
        let need = ENVELOPE_HEADER + len;
        if bytes.len() < need {
            return Err(WireError::Truncated {
                what: "envelope payload",
                need,
                have: bytes.len(),
            });
        }
        Ok((
            Envelope {
                round_id: u32_at(0),
                phase,
                sender: u32_at(5),
                receiver: u32_at(9),
                payload: bytes[ENVELOPE_HEADER..need].to_vec(),
            },
            need,
        ))
    }
}

/// Which of an owner's secrets a share belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SecretRef {
    /// Seed of the owner's self mask.
    SelfMask,
    /// Seed the owner shares with `peer` for their pairwise mask.
    PairSeed { peer: ClientId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShareRecord {
    pub secret: SecretRef,
    pub share: Share,
}

impl ShareRecord {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let (kind, peer) = match self.secret {
            SecretRef::SelfMask => (0u8, 0u32),
            SecretRef::PairSeed { peer } => (1u8, peer),
        };
        out.push(kind);
        out.extend_from_slice(&peer.to_le_bytes());
        out.extend_from_slice(&self.share.owner.to_le_bytes());
        out.extend_from_slice(&self.share.x.to_le_bytes());
        out.extend_from_slice(&self.share.y.to_le_bytes());
    }
}

pub fn encode_share_records(records: &[ShareRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * SHARE_RECORD);
    for r in records {
        r.encode_into(&mut out);
    }
    out
}

/// Parses records sent by `holder`.
pub fn decode_share_records(bytes: &[u8], holder: ClientId) -> Result<Vec<ShareRecord>, WireError> {
    if !bytes.len().is_multiple_of(SHARE_RECORD) {
        return Err(WireError::Truncated {
            what: "share record",
            need: bytes.len().div_ceil(SHARE_RECORD) * SHARE_RECORD,
            have: bytes.len(),
        });
    }
    bytes
        .chunks_exact(SHARE_RECORD)
        .map(|c| {
            let peer = u32::from_le_bytes(c[1..5].try_into().unwrap());
            let secret = match c[0] {
                0 => SecretRef::SelfMask,
                1 => SecretRef::PairSeed { peer },
                k => return Err(WireError::UnknownSecretKind(k)),
            };
            Ok(ShareRecord {
                secret,
                share: Share {
                    owner: u32::from_le_bytes(c[5..9].try_into().unwrap()),
                    holder,
                    x: u64::from_le_bytes(c[9..17].try_into().unwrap()),
                    y: u64::from_le_bytes(c[17..25].try_into().unwrap()),
                },
            })
        })
        .collect()
}

/// XORs `data` with a ChaCha20 keystream bound to the channel key, round
/// and direction. Sealing and opening are the same operation.
pub fn seal(channel_key: &[u8; 32], round_id: u32, sender: ClientId, receiver: ClientId, data: &mut [u8]) {
    let mut h = Sha256::new();
    h.update(b"fedshield/seal/v1");
    h.update(channel_key);
    h.update(round_id.to_le_bytes());
    h.update(sender.to_le_bytes());
    h.update(receiver.to_le_bytes());
    let mut stream = Stream::from_key(h.finalize().into());
    let mut pad = vec![0u8; data.len()];
    stream.fill_bytes(&mut pad);
    for (d, p) in data.iter_mut().zip(pad) {
        *d ^= p;
    }
}
