//! SecAgg+ secure summation: Shamir-shared double masking over a neighbor
//! graph, so the server learns only the sum of surviving clients' inputs.

pub mod graph;
pub mod keys;
pub mod mask;
pub mod protocol;
pub mod shamir;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::DropoutModel;
use crate::quantize::{FieldSpec, QuantizeError};
use crate::types::ClientId;

pub use graph::NeighborGraph;
pub use keys::KeyMode;
pub use mask::{client_masked_input, expand_mask};
pub use protocol::{run_secagg_round, SecAggOutput, SecAggSession, SessionPhase};
pub use shamir::{shamir_reconstruct, shamir_share, Share, ShamirError};
pub use wire::{Envelope, Phase, SERVER_ID};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SecAggError {
    #[error("threshold {threshold} is invalid: need 2 <= t <= {max}")]
    InvalidThreshold { threshold: usize, max: usize },
    #[error("aborted in {stage:?}: {available} live parties, threshold {needed}{}", owner.map(|o| format!(" (secrets of client {o})")).unwrap_or_default())]
    BelowThreshold {
        stage: Phase,
        needed: usize,
        available: usize,
        owner: Option<ClientId>,
    },
    #[error("aborted: surviving clients {0:?} are disconnected in the neighbor graph")]
    Disconnected(Vec<ClientId>),
    #[error("no pairwise seed for neighbor {0}")]
    MissingNeighborSeed(ClientId),
    #[error("bad round input: {0}")]
    InputMismatch(String),
    #[error("session for round {0} has already run")]
    SessionFinished(u32),
    #[error(transparent)]
    Shamir(#[from] ShamirError),
    #[error(transparent)]
    Wire(#[from] wire::WireError),
    #[error(transparent)]
    Key(#[from] keys::KeyError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}

impl SecAggError {
    /// Whether this is a protocol abort (as opposed to misuse).
    pub fn is_abort(&self) -> bool {
        matches!(self, SecAggError::BelowThreshold { .. } | SecAggError::Disconnected(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecAggConfig {
    /// Shares needed to reconstruct a seed.
    pub threshold: usize,
    /// Harary graph degree; 0 means the complete graph.
    pub neighbor_degree: usize,
    pub field: FieldSpec,
    pub dropout_model: DropoutModel,
    /// Per-client per-round probability of a random dropout.
    pub dropout_rate: f64,
    pub key_mode: KeyMode,
}

impl Default for SecAggConfig {
    fn default() -> Self {
        Self {
            threshold: 4,
            neighbor_degree: 0,
            field: FieldSpec::default(),
            dropout_model: DropoutModel::None,
            dropout_rate: 0.0,
            key_mode: KeyMode::Dealer,
        }
    }
}
